//! Linear descriptions of the set of feasible per-server splits.

use crate::kernel::GammaMatrix;
use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::model::{Allocation, ClusterSpec};

/// How a server is shared between users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Every resource is divided independently; capacity per resource.
    Rdm,
    /// Servers are time-shared; one unit of time per server.
    Tdm,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Rdm => "rdm",
            Mode::Tdm => "tdm",
        }
    }
}

/// LP whose variables are the task counts of eligible (user, server) pairs,
/// constrained to the feasible set of `mode`.
#[derive(Debug, Clone)]
pub struct Region {
    pub lp: LinearProgram,
    vars: Vec<Vec<Option<usize>>>,
}

impl Region {
    pub fn new(spec: &ClusterSpec, gamma: &GammaMatrix, mode: Mode) -> Self {
        let (n_users, n_servers) = (spec.num_users(), spec.num_servers());
        let mut vars = vec![vec![None; n_servers]; n_users];
        let mut count = 0;
        for (n, row) in vars.iter_mut().enumerate() {
            for (i, slot) in row.iter_mut().enumerate() {
                if gamma.eligible(n, i) {
                    *slot = Some(count);
                    count += 1;
                }
            }
        }
        let mut lp = LinearProgram::new(count);
        for i in 0..n_servers {
            match mode {
                Mode::Rdm => {
                    for r in 0..spec.num_resources() {
                        let coeffs: Vec<(usize, f64)> = (0..n_users)
                            .filter_map(|n| {
                                let d = spec.demand(n, r);
                                vars[n][i].filter(|_| d > 0.0).map(|v| (v, d))
                            })
                            .collect();
                        if !coeffs.is_empty() {
                            lp.add_constraint(coeffs, Relation::Le, spec.capacity(i, r));
                        }
                    }
                }
                Mode::Tdm => {
                    let coeffs: Vec<(usize, f64)> = (0..n_users)
                        .filter_map(|n| vars[n][i].map(|v| (v, 1.0 / gamma.get(n, i))))
                        .collect();
                    if !coeffs.is_empty() {
                        lp.add_constraint(coeffs, Relation::Le, 1.0);
                    }
                }
            }
        }
        Self { lp, vars }
    }

    pub fn var(&self, user: usize, server: usize) -> Option<usize> {
        self.vars[user][server]
    }

    /// Coefficients of user `n`'s total task count.
    pub fn total_terms(&self, user: usize) -> Vec<(usize, f64)> {
        self.vars[user]
            .iter()
            .flatten()
            .map(|&v| (v, 1.0))
            .collect()
    }

    /// Requires user `n`'s total to be at least `target`.
    pub fn require_total(&mut self, user: usize, target: f64) {
        if target <= 0.0 {
            return;
        }
        let terms = self.total_terms(user);
        self.lp.add_constraint(terms, Relation::Ge, target);
    }

    pub fn split(&self, x: &[f64]) -> Allocation {
        let rows = self
            .vars
            .iter()
            .map(|row| row.iter().map(|v| v.map_or(0.0, |v| x[v])).collect())
            .collect();
        Allocation::from_rows(rows)
    }

    pub fn solve(&self) -> LpOutcome {
        self.lp.solve()
    }
}
