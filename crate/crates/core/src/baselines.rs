//! Comparison mechanisms: uniform split, pooled DRF, C-DRFH and TSF.
//!
//! All but the uniform split are weighted lexicographic max-min problems
//! over `x_n / scale_n`, solved by progressive filling on top of an LP
//! feasibility oracle.

use crate::feasibility::{Mode, Region};
use crate::kernel::{gamma_matrix, unconstrained_monopoly_tasks, GammaMatrix};
use crate::lp::{LpOutcome, Relation};
use crate::model::{Allocation, ClusterSpec, ServerSpec};
use crate::psdsf::{SolveError, SolveReport};

/// Relative slack applied to lower bounds carried over from an earlier LP.
const CARRY_SLACK: f64 = 1e-12;
/// A user whose total cannot rise by more than this (relative) is frozen.
const FREEZE_TOL: f64 = 1e-9;

/// Progressive-filling problem: unfrozen users rise together as
/// `x_n = scale[n] * t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxMinProblem {
    pub scale: Vec<f64>,
    pub mode: Mode,
    /// Users with a fixed total, as `Some(total)`.
    pub frozen: Vec<Option<f64>>,
}

impl MaxMinProblem {
    pub fn new(scale: Vec<f64>, mode: Mode) -> Self {
        let frozen = scale.iter().map(|&s| (s <= 0.0).then_some(0.0)).collect();
        Self {
            scale,
            mode,
            frozen,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxMinSolution {
    pub totals: Vec<f64>,
    /// One feasible per-server split realizing `totals`.
    pub witness: Allocation,
    /// Common level at which each user froze (`NaN` if frozen on input).
    pub levels: Vec<f64>,
    /// Users frozen in each filling round, in order.
    pub rounds: Vec<Vec<usize>>,
}

/// True when some non-negative split gives every user at least its target
/// while respecting eligibility and the constraints of `mode`.
pub fn linear_feasible(spec: &ClusterSpec, targets: &[f64], mode: Mode) -> bool {
    linear_feasible_with(spec, &gamma_matrix(spec), targets, mode)
}

pub fn linear_feasible_with(
    spec: &ClusterSpec,
    gamma: &GammaMatrix,
    targets: &[f64],
    mode: Mode,
) -> bool {
    let mut region = Region::new(spec, gamma, mode);
    for (n, &t) in targets.iter().enumerate() {
        region.require_total(n, t);
    }
    region.solve().is_feasible()
}

fn carry(v: f64) -> f64 {
    v * (1.0 - CARRY_SLACK)
}

/// Weighted lexicographic max-min of `x_n / scale_n`.
pub fn lex_maxmin(
    spec: &ClusterSpec,
    gamma: &GammaMatrix,
    problem: &MaxMinProblem,
) -> MaxMinSolution {
    let n_users = spec.num_users();
    let base = Region::new(spec, gamma, problem.mode);
    let mut fixed = problem.frozen.clone();
    let mut levels = vec![f64::NAN; n_users];
    let mut rounds = Vec::new();
    let mut witness_x: Option<Vec<f64>> = None;
    let mut witness_region = base.clone();

    while fixed.iter().any(Option::is_none) {
        let unfrozen: Vec<usize> = (0..n_users).filter(|&n| fixed[n].is_none()).collect();

        let mut level_region = base.clone();
        for (n, f) in fixed.iter().enumerate() {
            if let Some(v) = f {
                level_region.require_total(n, carry(*v));
            }
        }
        let t_var = level_region.lp.add_var();
        level_region.lp.set_objective(t_var, 1.0);
        for &n in &unfrozen {
            let mut terms = level_region.total_terms(n);
            terms.push((t_var, -problem.scale[n]));
            level_region.lp.add_constraint(terms, Relation::Ge, 0.0);
        }
        let (level, x) = match level_region.solve() {
            LpOutcome::Optimal { x, .. } => (x[t_var], x),
            // Unreachable with finite capacities; freeze everyone at zero.
            _ => (0.0, vec![0.0; level_region.lp.num_vars()]),
        };
        witness_x = Some(x);
        witness_region = level_region;

        let mut headroom = Vec::with_capacity(unfrozen.len());
        for &n in &unfrozen {
            let mut region = base.clone();
            for (m, f) in fixed.iter().enumerate() {
                if let Some(v) = f {
                    region.require_total(m, carry(*v));
                }
            }
            for &m in &unfrozen {
                if m != n {
                    region.require_total(m, carry(problem.scale[m] * level));
                }
            }
            for (v, c) in region.total_terms(n) {
                region.lp.set_objective(v, c);
            }
            let best = match region.solve() {
                LpOutcome::Optimal { value, .. } => value,
                LpOutcome::Unbounded => f64::INFINITY,
                LpOutcome::Infeasible => problem.scale[n] * level,
            };
            let target = problem.scale[n] * level;
            headroom.push((n, (best - target) / target.max(1.0)));
        }
        let mut frozen_now: Vec<usize> = headroom
            .iter()
            .filter(|(_, h)| *h <= FREEZE_TOL)
            .map(|&(n, _)| n)
            .collect();
        if frozen_now.is_empty() {
            let least = headroom
                .iter()
                .map(|&(_, h)| h)
                .fold(f64::INFINITY, f64::min);
            frozen_now = headroom
                .iter()
                .filter(|&&(_, h)| h <= least)
                .map(|&(n, _)| n)
                .collect();
        }
        for &n in &frozen_now {
            fixed[n] = Some(problem.scale[n] * level);
            levels[n] = level;
        }
        rounds.push(frozen_now);
    }

    let totals: Vec<f64> = fixed.iter().map(|f| f.unwrap_or(0.0)).collect();
    let witness = match witness_x {
        Some(x) => {
            let mut w = witness_region.split(&x);
            // Trim the witness to the reported totals.
            for (n, &target) in totals.iter().enumerate() {
                let have = w.total(n);
                if have > target && have > 0.0 {
                    let f = target / have;
                    for i in 0..w.num_servers() {
                        w.set(n, i, w.get(n, i) * f);
                    }
                }
            }
            w
        }
        None => Allocation::zeros(n_users, spec.num_servers()),
    };
    MaxMinSolution {
        totals,
        witness,
        levels,
        rounds,
    }
}

/// Every user gets `weight / sum(weights)` of every server, eligible or
/// not; counts the tasks that share runs.
pub fn uniform_allocation(spec: &ClusterSpec, gamma: &GammaMatrix) -> Vec<f64> {
    let total_weight: f64 = spec.users.iter().map(|u| u.weight).sum();
    spec.users
        .iter()
        .enumerate()
        .map(|(n, u)| u.weight / total_weight * gamma.rows()[n].iter().sum::<f64>())
        .collect()
}

/// Largest per-task fraction of pooled capacity; infinite when a demanded
/// resource is absent from the whole cluster.
fn pooled_dominant_ratio(demand: &[f64], pool: &[f64]) -> f64 {
    demand
        .iter()
        .zip(pool)
        .filter(|(&d, _)| d > 0.0)
        .map(|(&d, &c)| if c > 0.0 { d / c } else { f64::INFINITY })
        .fold(0.0, f64::max)
}

fn global_share_scales(spec: &ClusterSpec) -> Vec<f64> {
    let pool = spec.pooled_capacities();
    spec.users
        .iter()
        .map(|u| {
            let q = pooled_dominant_ratio(&u.demand, &pool);
            if q.is_finite() && q > 0.0 {
                u.weight / q
            } else {
                0.0
            }
        })
        .collect()
}

/// DRF on the cluster collapsed into one resource pool, ignoring placement
/// constraints.
pub fn solve_drf_pool(spec: &ClusterSpec) -> Vec<f64> {
    let pool = ClusterSpec {
        resources: spec.resources.clone(),
        servers: vec![ServerSpec::new(0, spec.pooled_capacities())],
        users: spec
            .users
            .iter()
            .map(|u| {
                let mut u = u.clone();
                u.declared_eligibility = vec![true];
                u
            })
            .collect(),
        gamma_override: None,
    };
    let gamma = gamma_matrix(&pool);
    let problem = MaxMinProblem::new(global_share_scales(spec), Mode::Rdm);
    lex_maxmin(&pool, &gamma, &problem).totals
}

fn report(sol: MaxMinSolution) -> SolveReport {
    SolveReport {
        allocation: sol.witness,
        iterations: sol.rounds.len(),
        converged: true,
        residual: 0.0,
    }
}

/// Max-min on global dominant shares, computed as if the cluster were one
/// pool, under the real placement constraints.
pub fn solve_cdrfh(spec: &ClusterSpec) -> Result<SolveReport, SolveError> {
    if spec.gamma_override.is_some() {
        return Err(SolveError::Unsupported(
            "C-DRFH needs physical demands; remove gamma_override".into(),
        ));
    }
    let gamma = gamma_matrix(spec);
    let problem = MaxMinProblem::new(global_share_scales(spec), Mode::Rdm);
    Ok(report(lex_maxmin(spec, &gamma, &problem)))
}

/// Cluster-wide monopoly task counts, as if there were no placement
/// constraints. With an override, its row sums stand in.
pub fn tsf_gamma(spec: &ClusterSpec) -> Vec<f64> {
    if let Some(g) = &spec.gamma_override {
        return g.iter().map(|row| row.iter().sum()).collect();
    }
    spec.users
        .iter()
        .map(|u| {
            spec.servers
                .iter()
                .map(|s| unconstrained_monopoly_tasks(u, s))
                .sum()
        })
        .collect()
}

/// Task share fairness: max-min on `x_n / (weight_n * tsf_gamma_n)`.
/// Time-shared when the cluster carries a gamma override.
pub fn solve_tsf(spec: &ClusterSpec) -> Result<SolveReport, SolveError> {
    let gamma = gamma_matrix(spec);
    let mode = if spec.gamma_override.is_some() {
        Mode::Tdm
    } else {
        Mode::Rdm
    };
    let scale = tsf_gamma(spec)
        .iter()
        .zip(&spec.users)
        .map(|(g, u)| g * u.weight)
        .collect();
    Ok(report(lex_maxmin(
        spec,
        &gamma,
        &MaxMinProblem::new(scale, mode),
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::kernel::{rdm_feasible, verify_psdsf_rdm};

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn linear_feasibility_examples() {
        let spec = fixtures::ex1();
        assert!(linear_feasible(&spec, &[3.0, 3.0, 6.0], Mode::Rdm));
        assert!(!linear_feasible(&spec, &[3.0, 3.0, 7.0], Mode::Rdm));
        assert!(linear_feasible(&spec, &[0.0, 0.0, 0.0], Mode::Rdm));
        assert!(linear_feasible(&spec, &[3.0, 3.0, 6.0], Mode::Tdm));
    }

    #[test]
    fn tsf_ex1() {
        let spec = fixtures::ex1();
        assert_eq!(tsf_gamma(&spec), vec![6.0, 6.0, 12.0]);
        let rep = solve_tsf(&spec).unwrap();
        assert!(
            close(&rep.totals(), &[2.0, 2.0, 8.0], 1e-9),
            "{:?}",
            rep.totals()
        );
        assert!(rdm_feasible(&spec, &rep.allocation).passed());
        assert!(!verify_psdsf_rdm(&spec, &gamma_matrix(&spec), &rep.allocation).passed());
    }

    #[test]
    fn cdrfh_ex1() {
        let spec = fixtures::ex1();
        let rep = solve_cdrfh(&spec).unwrap();
        assert!(
            close(&rep.totals(), &[2.609, 3.130, 6.261], 1e-3),
            "{:?}",
            rep.totals()
        );
        // Exact values: t = 24/92 with scales (10, 12, 24).
        let t = 24.0 / 92.0;
        assert!(close(&rep.totals(), &[10.0 * t, 12.0 * t, 24.0 * t], 1e-9));
        assert!(rdm_feasible(&spec, &rep.allocation).passed());
        assert!(solve_cdrfh(&fixtures::ex3()).is_err());
    }

    #[test]
    fn cdrfh_dominant_resources_ex1() {
        let spec = fixtures::ex1();
        let pool = spec.pooled_capacities();
        let dominant: Vec<usize> = spec
            .users
            .iter()
            .map(|u| {
                let q = pooled_dominant_ratio(&u.demand, &pool);
                (0..3).find(|&r| u.demand[r] / pool[r] == q).unwrap()
            })
            .collect();
        assert_eq!(dominant, vec![2, 1, 1]);
    }

    #[test]
    fn lex_maxmin_single_user_gets_everything() {
        let spec = ClusterSpec::from_parts(
            vec![vec![4.0, 3.0], vec![1.0, 5.0]],
            vec![(vec![1.0, 1.0], 1.0, vec![true, true])],
        );
        let g = gamma_matrix(&spec);
        let sol = lex_maxmin(&spec, &g, &MaxMinProblem::new(vec![1.0], Mode::Rdm));
        assert!((sol.totals[0] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_examples() {
        let spec = fixtures::ex1();
        assert_eq!(
            uniform_allocation(&spec, &gamma_matrix(&spec)),
            vec![1.5, 1.5, 6.0]
        );
        let one = ClusterSpec::from_parts(
            vec![vec![4.0], vec![2.0]],
            vec![(vec![2.0], 3.0, vec![true, true])],
        );
        assert_eq!(uniform_allocation(&one, &gamma_matrix(&one)), vec![3.0]);
        let ex3 = fixtures::ex3();
        let u = uniform_allocation(&ex3, &gamma_matrix(&ex3));
        let expected = [557.5 / 3.0, 97.5, 110.0 / 6.0, 55.0 / 6.0];
        assert!(close(&u, &expected, 1e-9));
    }

    #[test]
    fn drf_pool_examples() {
        let disjoint = ClusterSpec::from_parts(
            vec![vec![1.0, 1.0]],
            vec![
                (vec![1.0, 0.0], 1.0, vec![true]),
                (vec![0.0, 1.0], 1.0, vec![true]),
            ],
        );
        assert!(close(&solve_drf_pool(&disjoint), &[1.0, 1.0], 1e-9));
        let sym = ClusterSpec::from_parts(
            vec![vec![3.0, 3.0]],
            vec![
                (vec![2.0, 1.0], 1.0, vec![true]),
                (vec![1.0, 2.0], 1.0, vec![true]),
            ],
        );
        assert!(close(&solve_drf_pool(&sym), &[1.0, 1.0], 1e-9));
    }

    #[test]
    fn single_server_mechanisms_agree() {
        let spec = ClusterSpec::from_parts(
            vec![vec![10.0, 8.0, 3.0]],
            vec![
                (vec![1.0, 2.0, 0.5], 1.0, vec![true]),
                (vec![3.0, 0.5, 0.1], 2.0, vec![true]),
                (vec![0.2, 0.2, 0.4], 0.5, vec![true]),
            ],
        );
        let pool = solve_drf_pool(&spec);
        assert!(close(&solve_cdrfh(&spec).unwrap().totals(), &pool, 1e-9));
        assert!(close(
            &crate::psdsf::solve_rdm(&spec).unwrap().totals(),
            &pool,
            1e-9
        ));
    }

    #[test]
    fn identical_users_split_equally_under_tsf() {
        let spec = ClusterSpec::from_parts(
            vec![vec![4.0, 4.0], vec![4.0, 4.0]],
            vec![
                (vec![1.0, 1.0], 1.0, vec![true, true]),
                (vec![1.0, 1.0], 1.0, vec![true, true]),
            ],
        );
        assert!(close(
            &solve_tsf(&spec).unwrap().totals(),
            &[4.0, 4.0],
            1e-9
        ));
    }
}
