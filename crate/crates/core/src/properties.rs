//! Checkers for the sharing properties of an allocation, and a seeded
//! misreport harness for strategy-proofness.
//!
//! Each checker returns a [`PropertyReport`]; a failed report always
//! carries a witness naming the users and values involved. The harness
//! falsifies, it does not prove: it samples misreports from a fixed,
//! documented distribution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::uniform_allocation;
use crate::feasibility::{Mode, Region};
use crate::kernel::{dominant_resources, GammaMatrix};
use crate::lp::LpOutcome;
use crate::mechanism::Mechanism;
use crate::model::{Allocation, ClusterSpec, Verdict, Violation};

/// Slack on task totals and allocation levels in every property check,
/// scaled by `max(1, value)` where the value can be large.
pub const PROPERTY_TOL: f64 = 1e-6;
/// Increase in normalized bottleneck allocation used to probe max-min
/// fairness.
pub const MAXMIN_PROBE: f64 = 1e-5;

/// Users, servers and values behind a failed check.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Witness {
    pub users: Vec<usize>,
    pub servers: Vec<usize>,
    pub values: Vec<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub property: &'static str,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    /// False when the property's precondition does not hold; the verdict
    /// then passes vacuously.
    pub applicable: bool,
}

impl PropertyReport {
    fn new(property: &'static str) -> Self {
        Self {
            property,
            verdict: Verdict::pass(),
            witness: None,
            applicable: true,
        }
    }

    fn not_applicable(property: &'static str, why: &str) -> Self {
        Self {
            applicable: false,
            witness: Some(Witness {
                note: why.to_string(),
                ..Witness::default()
            }),
            ..Self::new(property)
        }
    }

    fn fail(&mut self, violation: Violation, witness: Witness) {
        self.verdict.push(violation);
        if self.witness.is_none() {
            self.witness = Some(witness);
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict.passed()
    }
}

/// Every user runs at least as many tasks as under the weighted uniform
/// split of every server.
pub fn check_sharing_incentive(
    spec: &ClusterSpec,
    gamma: &GammaMatrix,
    totals: &[f64],
) -> PropertyReport {
    let mut report = PropertyReport::new("sharing-incentive");
    let uniform = uniform_allocation(spec, gamma);
    for (n, (&x, &u)) in totals.iter().zip(&uniform).enumerate() {
        let threshold = u - PROPERTY_TOL * u.max(1.0);
        if x < threshold {
            report.fail(
                Violation::new("fewer tasks than the uniform split")
                    .subject("user", n)
                    .values(x, u),
                Witness {
                    users: vec![n],
                    values: vec![x, u],
                    note: "total vs uniform".into(),
                    ..Witness::default()
                },
            );
        }
    }
    report
}

/// Tasks user `n` could run with user `m`'s bundle rescaled by
/// `weight_n / weight_m`.
pub fn envied_utility(spec: &ClusterSpec, n: usize, m: usize, x_m: f64) -> f64 {
    let (un, um) = (&spec.users[n], &spec.users[m]);
    let fit = un
        .demand
        .iter()
        .zip(&um.demand)
        .filter(|(&dn, _)| dn > 0.0)
        .map(|(dn, dm)| dm / dn)
        .fold(f64::INFINITY, f64::min);
    if fit.is_finite() {
        un.weight / um.weight * x_m * fit
    } else {
        0.0
    }
}

/// No user prefers another user's weight-adjusted bundle to its own. Only
/// the part of the bundle on servers where the envier is eligible counts;
/// resources it cannot be placed on are worth nothing to it.
pub fn check_envy_freeness(
    spec: &ClusterSpec,
    gamma: &GammaMatrix,
    alloc: &Allocation,
) -> PropertyReport {
    let mut report = PropertyReport::new("envy-freeness");
    let totals = alloc.totals();
    for n in 0..spec.num_users() {
        for m in 0..spec.num_users() {
            if m == n {
                continue;
            }
            let usable: f64 = (0..spec.num_servers())
                .filter(|&i| gamma.get(n, i) > 0.0)
                .map(|i| alloc.get(m, i))
                .sum();
            let envied = envied_utility(spec, n, m, usable);
            if envied > totals[n] + PROPERTY_TOL * totals[n].max(1.0) {
                report.fail(
                    Violation::new(format!("envies user {m}"))
                        .subject("user", n)
                        .values(envied, totals[n]),
                    Witness {
                        users: vec![n, m],
                        values: vec![totals[n], envied],
                        note: "own tasks vs tasks from the other bundle".into(),
                        ..Witness::default()
                    },
                );
            }
        }
    }
    report
}

/// No feasible allocation gives every user at least as many tasks and
/// someone more. Decided by maximizing the total gain with an LP.
pub fn check_pareto(
    spec: &ClusterSpec,
    gamma: &GammaMatrix,
    alloc: &Allocation,
    mode: Mode,
) -> PropertyReport {
    let mut report = PropertyReport::new("pareto-optimality");
    let totals = alloc.totals();
    let mut region = Region::new(spec, gamma, mode);
    for (n, &x) in totals.iter().enumerate() {
        region.require_total(n, x * (1.0 - 1e-12));
        for (v, c) in region.total_terms(n) {
            region.lp.set_objective(v, c);
        }
    }
    let current: f64 = totals.iter().sum();
    let allowance = PROPERTY_TOL * totals.iter().map(|x| x.max(1.0)).sum::<f64>();
    match region.solve() {
        LpOutcome::Optimal { x, value } => {
            let gain = value - current;
            if gain > allowance {
                let better = region.split(&x).totals();
                let users = (0..totals.len())
                    .filter(|&n| better[n] > totals[n] + PROPERTY_TOL)
                    .collect();
                report.fail(
                    Violation::new("total tasks can increase without hurting anyone")
                        .values(gain, allowance),
                    Witness {
                        users,
                        values: better,
                        note: "improved totals".into(),
                        ..Witness::default()
                    },
                );
            }
        }
        LpOutcome::Unbounded => report.fail(
            Violation::new("unbounded improvement"),
            Witness {
                note: "unbounded".into(),
                ..Witness::default()
            },
        ),
        LpOutcome::Infeasible => report.fail(
            Violation::new("allocation is not feasible in this mode"),
            Witness {
                note: "infeasible starting point".into(),
                ..Witness::default()
            },
        ),
    }
    report
}

/// A resource that is dominant for every user at every server it may use.
pub fn system_bottleneck(spec: &ClusterSpec, gamma: &GammaMatrix) -> Option<usize> {
    let mut common: Vec<bool> = vec![true; spec.num_resources()];
    let mut any = false;
    for (n, user) in spec.users.iter().enumerate() {
        for (i, server) in spec.servers.iter().enumerate() {
            if !gamma.eligible(n, i) {
                continue;
            }
            any = true;
            let dom = dominant_resources(user, server, 1e-9);
            for (r, c) in common.iter_mut().enumerate() {
                *c &= dom.contains(&r);
            }
        }
    }
    if any {
        common.iter().position(|&c| c)
    } else {
        None
    }
}

/// Weighted max-min fairness of the allocated amounts of `resource`, under
/// placement constraints: no user can gain `MAXMIN_PROBE` of normalized
/// allocation by taking only from users with strictly larger normalized
/// allocation.
fn check_constrained_maxmin(
    spec: &ClusterSpec,
    gamma: &GammaMatrix,
    alloc: &Allocation,
    resource: usize,
    mode: Mode,
    report: &mut PropertyReport,
) {
    let totals = alloc.totals();
    let level: Vec<f64> = spec
        .users
        .iter()
        .zip(&totals)
        .map(|(u, &x)| x * u.demand[resource] / u.weight)
        .collect();
    for n in 0..spec.num_users() {
        let d = spec.demand(n, resource);
        if d <= 0.0 || (0..spec.num_servers()).all(|i| !gamma.eligible(n, i)) {
            continue;
        }
        let mut region = Region::new(spec, gamma, mode);
        for m in 0..spec.num_users() {
            if m == n {
                continue;
            }
            let strictly_larger = level[m] > level[n] + PROPERTY_TOL * level[n].max(1.0);
            if !strictly_larger {
                region.require_total(m, totals[m] * (1.0 - 1e-12));
            }
        }
        let target = totals[n] + MAXMIN_PROBE * spec.users[n].weight / d;
        region.require_total(n, target);
        if region.solve().is_feasible() {
            report.fail(
                Violation::new(
                    "can gain on the shared resource at the expense of larger users only",
                )
                .subject("user", n)
                .subject("resource", resource)
                .values(level[n], level[n] + MAXMIN_PROBE),
                Witness {
                    users: vec![n],
                    values: level.clone(),
                    note: format!("normalized allocations of resource {resource}"),
                    ..Witness::default()
                },
            );
        }
    }
}

/// Max-min fairness on the system bottleneck resource, when one exists.
pub fn check_bottleneck_fairness(
    spec: &ClusterSpec,
    gamma: &GammaMatrix,
    alloc: &Allocation,
    mode: Mode,
) -> PropertyReport {
    let Some(r) = system_bottleneck(spec, gamma) else {
        return PropertyReport::not_applicable(
            "bottleneck-fairness",
            "no system bottleneck resource",
        );
    };
    let mut report = PropertyReport::new("bottleneck-fairness");
    check_constrained_maxmin(spec, gamma, alloc, r, mode, &mut report);
    report
}

/// Max-min fairness when the cluster has a single resource type.
pub fn check_single_resource_fairness(
    spec: &ClusterSpec,
    gamma: &GammaMatrix,
    alloc: &Allocation,
    mode: Mode,
) -> PropertyReport {
    if spec.num_resources() != 1 {
        return PropertyReport::not_applicable(
            "single-resource-fairness",
            "more than one resource type",
        );
    }
    let mut report = PropertyReport::new("single-resource-fairness");
    check_constrained_maxmin(spec, gamma, alloc, 0, mode, &mut report);
    report
}

/// One misreported declaration: demand vector and eligible servers.
#[derive(Debug, Clone, PartialEq)]
pub struct Misreport {
    pub demand: Vec<f64>,
    pub eligibility: Vec<bool>,
}

/// What happened when a user lied.
#[derive(Debug, Clone, PartialEq)]
pub struct MisreportOutcome {
    /// Tasks the liar can actually run with what it received.
    pub true_utility: f64,
    /// Task totals of every user under the lie (the liar's entry counts
    /// tasks of the misreported shape).
    pub totals: Vec<f64>,
    pub converged: bool,
}

/// Tasks of the true shape runnable from bundles of `reported_tasks` tasks
/// of the reported shape; zero if a needed resource was not requested.
pub fn true_utility(true_demand: &[f64], reported: &[f64], reported_tasks: f64) -> f64 {
    let fit = true_demand
        .iter()
        .zip(reported)
        .filter(|(&d, _)| d > 0.0)
        .map(|(d, r)| r / d)
        .fold(f64::INFINITY, f64::min);
    if fit.is_finite() {
        reported_tasks * fit
    } else {
        0.0
    }
}

pub fn evaluate_misreport(
    spec: &ClusterSpec,
    mechanism: Mechanism,
    user: usize,
    lie: &Misreport,
) -> Option<MisreportOutcome> {
    let mut lied = spec.clone();
    lied.users[user].demand = lie.demand.clone();
    lied.users[user].declared_eligibility = lie.eligibility.clone();
    let out = mechanism.run(&lied).ok()?;
    Some(MisreportOutcome {
        true_utility: true_utility(&spec.users[user].demand, &lie.demand, out.totals[user]),
        totals: out.totals,
        converged: out.converged,
    })
}

/// Draws one misreport: with equal odds, log-uniform scalings of every
/// demanded component in [0.25, 4], zeroing one demanded component, or
/// dropping one eligible server. Falls back to scaling when the other
/// two are impossible.
pub fn draw_misreport<R: Rng>(
    rng: &mut R,
    spec: &ClusterSpec,
    gamma: &GammaMatrix,
    user: usize,
) -> Misreport {
    let u = &spec.users[user];
    let mut lie = Misreport {
        demand: u.demand.clone(),
        eligibility: u.declared_eligibility.clone(),
    };
    let demanded: Vec<usize> = (0..u.demand.len()).filter(|&r| u.demand[r] > 0.0).collect();
    let eligible: Vec<usize> = (0..spec.num_servers())
        .filter(|&i| gamma.eligible(user, i))
        .collect();
    match rng.gen_range(0..3) {
        1 if demanded.len() > 1 => {
            let r = demanded[rng.gen_range(0..demanded.len())];
            lie.demand[r] = 0.0;
        }
        2 if !eligible.is_empty() => {
            let i = eligible[rng.gen_range(0..eligible.len())];
            lie.eligibility[i] = false;
        }
        _ => {
            let (lo, hi) = (0.25f64.ln(), 4.0f64.ln());
            for &r in &demanded {
                lie.demand[r] *= rng.gen_range(lo..=hi).exp();
            }
        }
    }
    lie
}

fn harness_rng(seed: u64, user: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (user as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Seeded strategy-proofness falsification for one user.
///
/// For `psdsf-rdm` the weaker guarantee is checked instead: whenever a lie
/// strictly lowers some other user's tasks, it must strictly lower the
/// liar's own true utility too. That guarantee assumes every user demands
/// every resource, so such instances are reported as not applicable.
/// Every other mechanism must admit no lie raising the liar's true utility
/// by more than `PROPERTY_TOL`.
pub fn strategy_harness(
    spec: &ClusterSpec,
    mechanism: Mechanism,
    user: usize,
    trials: usize,
    seed: u64,
) -> PropertyReport {
    const NAME: &str = "strategy-proofness";
    let weak_guarantee = mechanism == Mechanism::PsdsfRdm;
    if weak_guarantee
        && spec
            .users
            .iter()
            .any(|u| u.demand.iter().any(|&d| d <= 0.0))
    {
        return PropertyReport::not_applicable(NAME, "some user does not demand every resource");
    }
    let Ok(truthful) = mechanism.run(spec) else {
        return PropertyReport::not_applicable(NAME, "mechanism rejects this scenario");
    };
    let mut report = PropertyReport::new(NAME);
    let gamma = crate::kernel::gamma_matrix(spec);
    let mut rng = harness_rng(seed, user);
    let honest = truthful.totals[user];
    for trial in 0..trials {
        let lie = draw_misreport(&mut rng, spec, &gamma, user);
        let Some(out) = evaluate_misreport(spec, mechanism, user, &lie) else {
            continue;
        };
        if !out.converged {
            continue;
        }
        let witness = || Witness {
            users: vec![user],
            values: lie
                .demand
                .iter()
                .copied()
                .chain([honest, out.true_utility])
                .collect(),
            servers: (0..lie.eligibility.len())
                .filter(|&i| lie.eligibility[i])
                .collect(),
            note: format!("trial {trial}: misreported demand, honest tasks, true utility"),
        };
        if weak_guarantee {
            let harmed_other = (0..spec.num_users())
                .any(|m| m != user && out.totals[m] < truthful.totals[m] - PROPERTY_TOL);
            let self_harmed = out.true_utility < honest - 1e-9 * honest.max(1.0);
            if harmed_other && !self_harmed {
                report.fail(
                    Violation::new("lie hurts another user without hurting the liar")
                        .subject("user", user)
                        .values(out.true_utility, honest),
                    witness(),
                );
            }
        } else if out.true_utility > honest + PROPERTY_TOL * honest.max(1.0) {
            report.fail(
                Violation::new("profitable misreport")
                    .subject("user", user)
                    .values(out.true_utility, honest),
                witness(),
            );
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{solve_cdrfh, solve_tsf};
    use crate::fixtures;
    use crate::kernel::gamma_matrix;
    use crate::psdsf::{solve_rdm, solve_tdm};

    #[test]
    fn sharing_incentive_examples() {
        let spec = fixtures::ex1();
        let g = gamma_matrix(&spec);
        assert!(check_sharing_incentive(&spec, &g, &[3.0, 3.0, 6.0]).passed());
        assert!(check_sharing_incentive(&spec, &g, &[1.5, 1.5, 6.0]).passed());
        let cd = solve_cdrfh(&spec).unwrap().totals();
        assert!(check_sharing_incentive(&spec, &g, &cd).passed());
        let r = check_sharing_incentive(&spec, &g, &[1.0, 3.0, 6.0]);
        assert!(!r.passed());
        assert_eq!(r.witness.unwrap().users, vec![0]);
    }

    #[test]
    fn envy_examples() {
        let ex2 = fixtures::ex2();
        assert!((envied_utility(&ex2, 2, 3, 8.0) - 4.0).abs() < 1e-12);
        assert!(check_envy_freeness(&ex2, &gamma_matrix(&ex2), &fixtures::ex2_psdsf()).passed());

        let ex1 = fixtures::ex1();
        assert_eq!(envied_utility(&ex1, 0, 2, 6.0), 0.0);
        assert!(check_envy_freeness(&ex1, &gamma_matrix(&ex1), &fixtures::ex1_psdsf()).passed());

        let twins = ClusterSpec::from_parts(
            vec![vec![2.0]],
            vec![(vec![1.0], 1.0, vec![true]), (vec![1.0], 1.0, vec![true])],
        );
        let equal = Allocation::from_rows(vec![vec![1.0], vec![1.0]]);
        assert!(check_envy_freeness(&twins, &gamma_matrix(&twins), &equal).passed());
        let unequal = Allocation::from_rows(vec![vec![0.5], vec![1.5]]);
        assert!(!check_envy_freeness(&twins, &gamma_matrix(&twins), &unequal).passed());
    }

    #[test]
    fn pareto_examples() {
        let spec = fixtures::ex1();
        let g = gamma_matrix(&spec);
        assert!(check_pareto(&spec, &g, &fixtures::ex1_psdsf(), Mode::Tdm).passed());
        let r = check_pareto(&spec, &g, &Allocation::zeros(3, 2), Mode::Tdm);
        assert!(!r.passed());
        assert!(r.verdict.violations()[0].measured > 10.0);
    }

    #[test]
    fn bottleneck_fairness_examples() {
        let spec = fixtures::ex1();
        let g = gamma_matrix(&spec);
        assert_eq!(system_bottleneck(&spec, &g), Some(1));
        let ps = solve_rdm(&spec).unwrap().allocation;
        assert!(check_bottleneck_fairness(&spec, &g, &ps, Mode::Rdm).passed());
        let cd = solve_cdrfh(&spec).unwrap().allocation;
        assert!(!check_bottleneck_fairness(&spec, &g, &cd, Mode::Rdm).passed());
        let tsf = solve_tsf(&spec).unwrap().allocation;
        assert!(!check_bottleneck_fairness(&spec, &g, &tsf, Mode::Rdm).passed());

        let mixed = ClusterSpec::from_parts(
            vec![vec![1.0, 1.0]],
            vec![
                (vec![1.0, 0.1], 1.0, vec![true]),
                (vec![0.1, 1.0], 1.0, vec![true]),
            ],
        );
        let gm = gamma_matrix(&mixed);
        let r = check_bottleneck_fairness(&mixed, &gm, &Allocation::zeros(2, 1), Mode::Rdm);
        assert!(!r.applicable && r.passed());
    }

    #[test]
    fn single_resource_fairness_examples() {
        let spec = ClusterSpec::from_parts(
            vec![vec![1.0], vec![1.0]],
            vec![
                (vec![1.0], 1.0, vec![true, true]),
                (vec![1.0], 1.0, vec![false, true]),
            ],
        );
        let g = gamma_matrix(&spec);
        let fair = Allocation::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(check_single_resource_fairness(&spec, &g, &fair, Mode::Rdm).passed());
        let starved = Allocation::from_rows(vec![vec![1.0, 1.0], vec![0.0, 0.0]]);
        assert!(!check_single_resource_fairness(&spec, &g, &starved, Mode::Rdm).passed());
        let solved = solve_rdm(&spec).unwrap();
        assert!(check_single_resource_fairness(&spec, &g, &solved.allocation, Mode::Rdm).passed());

        let alone = ClusterSpec::from_parts(
            vec![vec![3.0], vec![2.0]],
            vec![(vec![1.0], 1.0, vec![true, true])],
        );
        let ga = gamma_matrix(&alone);
        let all = Allocation::from_rows(vec![vec![3.0, 2.0]]);
        assert!(check_single_resource_fairness(&alone, &ga, &all, Mode::Rdm).passed());

        let ex1 = fixtures::ex1();
        let r = check_single_resource_fairness(
            &ex1,
            &gamma_matrix(&ex1),
            &fixtures::ex1_psdsf(),
            Mode::Rdm,
        );
        assert!(!r.applicable);
    }

    #[test]
    fn zeroed_bandwidth_misreport_is_worthless() {
        let spec = fixtures::ex1();
        let lie = Misreport {
            demand: vec![1.0, 2.0, 0.0],
            eligibility: vec![true, true],
        };
        let out = evaluate_misreport(&spec, Mechanism::PsdsfTdm, 0, &lie).unwrap();
        assert_eq!(out.true_utility, 0.0);
    }

    #[test]
    fn truthful_report_changes_nothing() {
        let spec = fixtures::ex1();
        let honest = solve_tdm(&spec).unwrap().totals();
        for n in 0..3 {
            let lie = Misreport {
                demand: spec.users[n].demand.clone(),
                eligibility: spec.users[n].declared_eligibility.clone(),
            };
            let out = evaluate_misreport(&spec, Mechanism::PsdsfTdm, n, &lie).unwrap();
            assert!((out.true_utility - honest[n]).abs() < 1e-12);
        }
    }

    #[test]
    fn harness_on_ex1_finds_no_profitable_lie() {
        let spec = fixtures::ex1();
        for n in 0..3 {
            let r = strategy_harness(&spec, Mechanism::PsdsfTdm, n, 100, 42);
            assert!(r.passed(), "{:?}", r.verdict);
        }
        assert_eq!(
            strategy_harness(&spec, Mechanism::PsdsfTdm, 1, 20, 9),
            strategy_harness(&spec, Mechanism::PsdsfTdm, 1, 20, 9)
        );
        // bandwidth is not demanded by u3, so the RDM guarantee does not apply
        assert!(!strategy_harness(&spec, Mechanism::PsdsfRdm, 0, 5, 1).applicable);
    }
}
