use std::fmt;
use std::str::FromStr;

use crate::baselines::{solve_cdrfh, solve_drf_pool, solve_tsf, uniform_allocation};
use crate::feasibility::Mode;
use crate::kernel::gamma_matrix;
use crate::model::{Allocation, ClusterSpec};
use crate::psdsf::{solve_rdm, solve_tdm, SolveError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mechanism {
    PsdsfRdm,
    PsdsfTdm,
    DrfPool,
    Cdrfh,
    Tsf,
    Uniform,
}

impl Mechanism {
    pub const ALL: [Mechanism; 6] = [
        Mechanism::PsdsfRdm,
        Mechanism::PsdsfTdm,
        Mechanism::DrfPool,
        Mechanism::Cdrfh,
        Mechanism::Tsf,
        Mechanism::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::PsdsfRdm => "psdsf-rdm",
            Mechanism::PsdsfTdm => "psdsf-tdm",
            Mechanism::DrfPool => "drf-pool",
            Mechanism::Cdrfh => "cdrfh",
            Mechanism::Tsf => "tsf",
            Mechanism::Uniform => "uniform",
        }
    }

    /// Feasibility regime the mechanism's per-server split obeys.
    pub fn mode(self, spec: &ClusterSpec) -> Mode {
        match self {
            Mechanism::PsdsfTdm => Mode::Tdm,
            Mechanism::Tsf if spec.gamma_override.is_some() => Mode::Tdm,
            _ => Mode::Rdm,
        }
    }

    pub fn run(self, spec: &ClusterSpec) -> Result<Outcome, SolveError> {
        let from_report = |r: crate::psdsf::SolveReport| Outcome {
            totals: r.allocation.totals(),
            allocation: Some(r.allocation),
            converged: r.converged,
        };
        Ok(match self {
            Mechanism::PsdsfRdm => from_report(solve_rdm(spec)?),
            Mechanism::PsdsfTdm => from_report(solve_tdm(spec)?),
            Mechanism::Cdrfh => from_report(solve_cdrfh(spec)?),
            Mechanism::Tsf => from_report(solve_tsf(spec)?),
            Mechanism::DrfPool => Outcome {
                totals: solve_drf_pool(spec),
                allocation: None,
                converged: true,
            },
            Mechanism::Uniform => Outcome {
                totals: uniform_allocation(spec, &gamma_matrix(spec)),
                allocation: None,
                converged: true,
            },
        })
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Mechanism::ALL.iter().map(|m| m.name()).collect();
                format!(
                    "unknown mechanism `{s}` (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

/// Result of running a mechanism. Pooled DRF and the uniform split have no
/// per-server placement, so only totals are available for them.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub totals: Vec<f64>,
    pub allocation: Option<Allocation>,
    pub converged: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in Mechanism::ALL {
            assert_eq!(m.name().parse::<Mechanism>().unwrap(), m);
        }
        assert!("drf".parse::<Mechanism>().is_err());
    }
}
