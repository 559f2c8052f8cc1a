//! Per-server quantities: dominant resources, monopoly task counts and
//! virtual dominant shares, plus the feasibility predicates and the two
//! optimality verifiers built on them.

use crate::model::{Allocation, ClusterSpec, ServerSpec, UserSpec, Verdict, Violation};
use thiserror::Error;

/// Relative slack allowed on capacity and time-share constraints.
pub const EPS_FEAS: f64 = 1e-9;
/// A resource counts as saturated within this fraction of its capacity.
pub const EPS_SAT: f64 = 1e-7;
/// Absolute tolerance when comparing normalized virtual dominant shares.
pub const EPS_TIE: f64 = 1e-7;
/// Shares below this fraction of a server are treated as no allocation.
pub const EPS_ZERO: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error(
        "gamma_override[{user}][{server}] = {given} contradicts the demand-derived value {derived}"
    )]
    OverrideContradictsDemands {
        user: usize,
        server: usize,
        given: f64,
        derived: f64,
    },
}

/// Demand-to-capacity ratio; `+inf` when a demanded resource is absent.
fn ratio(demand: f64, capacity: f64) -> f64 {
    if capacity > 0.0 {
        demand / capacity
    } else {
        f64::INFINITY
    }
}

/// The resource with the largest per-task fraction of this server's
/// capacity. Resources the user does not demand are skipped; ties go to the
/// lowest index. A demanded resource the server lacks has an infinite ratio
/// and always wins.
pub fn dominant_resource(user: &UserSpec, server: &ServerSpec) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (r, (&d, &c)) in user.demand.iter().zip(&server.capacities).enumerate() {
        if d <= 0.0 {
            continue;
        }
        let q = ratio(d, c);
        if best.map_or(true, |(_, b)| q > b) {
            best = Some((r, q));
        }
    }
    best.map(|(r, _)| r)
}

/// Every resource attaining the dominant ratio, within a relative
/// tolerance of `tol`.
pub fn dominant_resources(user: &UserSpec, server: &ServerSpec, tol: f64) -> Vec<usize> {
    let Some(top) = dominant_resource(user, server) else {
        return Vec::new();
    };
    let best = ratio(user.demand[top], server.capacities[top]);
    user.demand
        .iter()
        .zip(&server.capacities)
        .enumerate()
        .filter(|(_, (&d, &c))| {
            if d <= 0.0 {
                return false;
            }
            let q = ratio(d, c);
            if best.is_infinite() {
                q.is_infinite()
            } else {
                q >= best * (1.0 - tol)
            }
        })
        .map(|(r, _)| r)
        .collect()
}

/// Number of tasks the user could run with the whole server to itself,
/// ignoring placement constraints.
pub fn unconstrained_monopoly_tasks(user: &UserSpec, server: &ServerSpec) -> f64 {
    let mut tasks = f64::INFINITY;
    for (&d, &c) in user.demand.iter().zip(&server.capacities) {
        if d > 0.0 {
            tasks = tasks.min(c / d);
        }
    }
    if tasks.is_finite() {
        tasks
    } else {
        0.0
    }
}

/// Number of tasks the user could run when monopolizing the server; zero
/// when the server is not declared eligible.
pub fn monopoly_tasks(user: &UserSpec, server: &ServerSpec) -> f64 {
    if user
        .declared_eligibility
        .get(server.id)
        .copied()
        .unwrap_or(false)
    {
        unconstrained_monopoly_tasks(user, server)
    } else {
        0.0
    }
}

/// Monopoly task counts for every (user, server) pair. A pair is eligible
/// exactly when its entry is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaMatrix {
    values: Vec<Vec<f64>>,
}

impl GammaMatrix {
    pub fn from_rows(values: Vec<Vec<f64>>) -> Self {
        Self { values }
    }

    #[inline]
    pub fn get(&self, user: usize, server: usize) -> f64 {
        self.values[user][server]
    }

    #[inline]
    pub fn eligible(&self, user: usize, server: usize) -> bool {
        self.values[user][server] > 0.0
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn num_users(&self) -> usize {
        self.values.len()
    }

    pub fn num_servers(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Users with a positive entry at `server`.
    pub fn eligible_users(&self, server: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.values.len()).filter(move |&n| self.eligible(n, server))
    }

    /// Zeroes the rows of users not in `active`.
    pub fn restricted_to(&self, active: &[bool]) -> Self {
        let values = self
            .values
            .iter()
            .zip(active)
            .map(|(row, &a)| if a { row.clone() } else { vec![0.0; row.len()] })
            .collect();
        Self { values }
    }
}

pub fn gamma_matrix(spec: &ClusterSpec) -> GammaMatrix {
    if let Some(g) = &spec.gamma_override {
        return GammaMatrix::from_rows(g.clone());
    }
    let values = spec
        .users
        .iter()
        .map(|u| spec.servers.iter().map(|s| monopoly_tasks(u, s)).collect())
        .collect();
    GammaMatrix { values }
}

/// Fails when an override disagrees with what the demand vectors imply,
/// which would make resource-level feasibility meaningless.
pub fn check_override_consistent(spec: &ClusterSpec) -> Result<(), KernelError> {
    let Some(g) = &spec.gamma_override else {
        return Ok(());
    };
    for (n, user) in spec.users.iter().enumerate() {
        for (i, server) in spec.servers.iter().enumerate() {
            let derived = monopoly_tasks(user, server);
            let given = g[n][i];
            if (given - derived).abs() > EPS_FEAS * derived.max(1.0) {
                return Err(KernelError::OverrideContradictsDemands {
                    user: n,
                    server: i,
                    given,
                    derived,
                });
            }
        }
    }
    Ok(())
}

pub fn task_totals(alloc: &Allocation) -> Vec<f64> {
    alloc.totals()
}

/// `x_n / (weight_n * gamma_{n,i})`, or `None` where the user is
/// ineligible.
#[inline]
pub fn normalized_vds(total: f64, weight: f64, gamma: f64) -> Option<f64> {
    (gamma > 0.0).then(|| total / (weight * gamma))
}

/// Normalized virtual dominant shares for every (user, server) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct VdsView {
    pub normalized_vds: Vec<Vec<Option<f64>>>,
}

impl VdsView {
    pub fn get(&self, user: usize, server: usize) -> Option<f64> {
        self.normalized_vds[user][server]
    }

    /// Smallest normalized share among users eligible at `server`.
    pub fn server_level(&self, server: usize) -> Option<f64> {
        self.normalized_vds
            .iter()
            .filter_map(|row| row[server])
            .reduce(f64::min)
    }
}

pub fn vds_view(alloc: &Allocation, gamma: &GammaMatrix, weights: &[f64]) -> VdsView {
    let totals = alloc.totals();
    let normalized_vds = totals
        .iter()
        .zip(weights)
        .zip(gamma.rows())
        .map(|((&x, &w), row)| row.iter().map(|&g| normalized_vds(x, w, g)).collect())
        .collect();
    VdsView { normalized_vds }
}

/// Verdict of a feasibility check together with the raw slack values.
#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub verdict: Verdict,
    /// RDM: `slack[i][r] = c_{i,r} - usage`. TDM: `slack[i] = [1 - time]`.
    pub slack: Vec<Vec<f64>>,
}

impl Feasibility {
    pub fn passed(&self) -> bool {
        self.verdict.passed()
    }
}

fn allocation_entry_violations(spec: &ClusterSpec, alloc: &Allocation, verdict: &mut Verdict) {
    for n in 0..alloc.num_users() {
        for i in 0..alloc.num_servers() {
            let x = alloc.get(n, i);
            if !(x >= 0.0) {
                verdict.push(
                    Violation::new("negative task count")
                        .subject("user", n)
                        .subject("server", i)
                        .values(x, 0.0),
                );
            } else if x > 0.0 && !spec.users[n].declared_eligibility[i] {
                verdict.push(
                    Violation::new("tasks placed on an ineligible server")
                        .subject("user", n)
                        .subject("server", i)
                        .values(x, 0.0),
                );
            }
        }
    }
}

/// Per-resource capacity constraints on every server.
pub fn rdm_feasible(spec: &ClusterSpec, alloc: &Allocation) -> Feasibility {
    let mut verdict = Verdict::pass();
    allocation_entry_violations(spec, alloc, &mut verdict);
    let mut slack = Vec::with_capacity(spec.num_servers());
    for (i, server) in spec.servers.iter().enumerate() {
        let used = alloc.server_usage(spec, i);
        let row: Vec<f64> = server
            .capacities
            .iter()
            .zip(&used)
            .map(|(c, u)| c - u)
            .collect();
        for (r, (&s, &c)) in row.iter().zip(&server.capacities).enumerate() {
            if s < -EPS_FEAS * c {
                verdict.push(
                    Violation::new("resource over-committed")
                        .subject("server", i)
                        .subject("resource", r)
                        .values(used[r], c),
                );
            }
        }
        slack.push(row);
    }
    Feasibility { verdict, slack }
}

/// Fraction of server `i`'s time consumed under time-sharing.
pub fn server_time(gamma: &GammaMatrix, alloc: &Allocation, server: usize) -> f64 {
    (0..alloc.num_users())
        .filter(|&n| gamma.eligible(n, server))
        .map(|n| alloc.get(n, server) / gamma.get(n, server))
        .sum()
}

/// One time-share constraint per server.
pub fn tdm_feasible(spec: &ClusterSpec, gamma: &GammaMatrix, alloc: &Allocation) -> Feasibility {
    let mut verdict = Verdict::pass();
    allocation_entry_violations(spec, alloc, &mut verdict);
    let mut slack = Vec::with_capacity(spec.num_servers());
    for i in 0..spec.num_servers() {
        for n in 0..alloc.num_users() {
            if alloc.get(n, i) > 0.0 && !gamma.eligible(n, i) {
                verdict.push(
                    Violation::new("tasks placed where the user cannot run")
                        .subject("user", n)
                        .subject("server", i)
                        .values(alloc.get(n, i), 0.0),
                );
            }
        }
        let time = server_time(gamma, alloc, i);
        if 1.0 - time < -EPS_FEAS {
            verdict.push(
                Violation::new("server time over-committed")
                    .subject("server", i)
                    .values(time, 1.0),
            );
        }
        slack.push(vec![1.0 - time]);
    }
    Feasibility { verdict, slack }
}

fn is_saturated(capacity: f64, used: f64) -> bool {
    capacity > 0.0 && used >= capacity * (1.0 - EPS_SAT)
}

/// Resources on `server` used up to capacity (within `EPS_SAT`).
pub fn saturated_resources(spec: &ClusterSpec, alloc: &Allocation, server: usize) -> Vec<usize> {
    let used = alloc.server_usage(spec, server);
    spec.servers[server]
        .capacities
        .iter()
        .zip(&used)
        .enumerate()
        .filter(|(_, (&c, &u))| is_saturated(c, u))
        .map(|(r, _)| r)
        .collect()
}

/// True when user `m` consumes a non-negligible amount of `resource` on
/// `server`.
fn consumes(
    spec: &ClusterSpec,
    alloc: &Allocation,
    m: usize,
    server: usize,
    resource: usize,
) -> bool {
    let c = spec.capacity(server, resource);
    let a = alloc.get(m, server) * spec.demand(m, resource);
    a > 0.0 && (c <= 0.0 || a > EPS_ZERO * c)
}

struct BottleneckCtx<'a> {
    spec: &'a ClusterSpec,
    gamma: &'a GammaMatrix,
    alloc: &'a Allocation,
    totals: Vec<f64>,
}

impl BottleneckCtx<'_> {
    fn vds(&self, n: usize, i: usize) -> f64 {
        normalized_vds(
            self.totals[n],
            self.spec.users[n].weight,
            self.gamma.get(n, i),
        )
        .unwrap_or(f64::INFINITY)
    }

    fn is_bottleneck(&self, n: usize, i: usize, r: usize, used: &[f64]) -> bool {
        let spec = self.spec;
        if spec.demand(n, r) <= 0.0 || !is_saturated(spec.capacity(i, r), used[r]) {
            return false;
        }
        let own = self.vds(n, i);
        (0..spec.num_users())
            .filter(|&m| consumes(spec, self.alloc, m, i, r))
            .all(|m| own >= self.vds(m, i) - EPS_TIE)
    }
}

/// Whether `resource` is a bottleneck for `user` at `server`: the user
/// demands it, it is saturated, and no other consumer of it there has a
/// larger normalized virtual dominant share.
pub fn is_bottleneck(
    spec: &ClusterSpec,
    gamma: &GammaMatrix,
    alloc: &Allocation,
    user: usize,
    server: usize,
    resource: usize,
) -> bool {
    let ctx = BottleneckCtx {
        spec,
        gamma,
        alloc,
        totals: alloc.totals(),
    };
    ctx.is_bottleneck(user, server, resource, &alloc.server_usage(spec, server))
}

/// Checks the resource-division optimality condition: every user has a
/// bottleneck resource at every server it is eligible for.
pub fn verify_psdsf_rdm(spec: &ClusterSpec, gamma: &GammaMatrix, alloc: &Allocation) -> Verdict {
    let mut verdict = rdm_feasible(spec, alloc).verdict;
    if let Err(e) = check_override_consistent(spec) {
        verdict.push(Violation::new(e.to_string()));
        return verdict;
    }
    let ctx = BottleneckCtx {
        spec,
        gamma,
        alloc,
        totals: alloc.totals(),
    };
    for i in 0..spec.num_servers() {
        let used = alloc.server_usage(spec, i);
        for n in gamma.eligible_users(i) {
            let found = (0..spec.num_resources()).any(|r| ctx.is_bottleneck(n, i, r, &used));
            if !found {
                verdict.push(
                    Violation::new("no bottleneck resource")
                        .subject("user", n)
                        .subject("server", i)
                        .values(ctx.vds(n, i), f64::NAN),
                );
            }
        }
    }
    verdict
}

/// Checks the time-sharing optimality condition: every server with eligible
/// users is fully shared, and only users at the server's minimum normalized
/// share hold any of it.
pub fn verify_psdsf_tdm(spec: &ClusterSpec, gamma: &GammaMatrix, alloc: &Allocation) -> Verdict {
    let mut verdict = tdm_feasible(spec, gamma, alloc).verdict;
    let view = vds_view(alloc, gamma, &spec.weights());
    for i in 0..spec.num_servers() {
        let Some(level) = view.server_level(i) else {
            continue;
        };
        let time = server_time(gamma, alloc, i);
        if time < 1.0 - EPS_FEAS {
            verdict.push(
                Violation::new("server time not fully shared")
                    .subject("server", i)
                    .values(time, 1.0),
            );
        }
        for m in gamma.eligible_users(i) {
            let share = alloc.get(m, i) / gamma.get(m, i);
            let v = view.get(m, i).unwrap_or(f64::INFINITY);
            if share > EPS_ZERO && v > level + EPS_TIE {
                verdict.push(
                    Violation::new("user above the server's minimum share holds time")
                        .subject("user", m)
                        .subject("server", i)
                        .values(v, level),
                );
            }
        }
    }
    verdict
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{self, EX3_GAMMA};

    const CPU: usize = 0;
    const RAM: usize = 1;
    const BW: usize = 2;

    #[test]
    fn dominant_resource_examples() {
        let spec = fixtures::ex1();
        assert_eq!(
            dominant_resource(&spec.users[0], &spec.servers[0]),
            Some(RAM)
        );
        assert_eq!(
            dominant_resource(&spec.users[0], &spec.servers[1]),
            Some(BW)
        );
        let u = UserSpec::unconstrained(0, vec![1.0, 1.0], 1.0, 1);
        let s = ServerSpec::new(0, vec![1.0, 1.0]);
        assert_eq!(dominant_resource(&u, &s), Some(CPU));
        assert_eq!(dominant_resources(&u, &s, 1e-12), vec![CPU, RAM]);
        let zero = UserSpec::unconstrained(0, vec![0.0, 0.0], 1.0, 1);
        assert_eq!(dominant_resource(&zero, &s), None);
    }

    #[test]
    fn monopoly_task_examples() {
        let ex1 = fixtures::ex1();
        assert_eq!(monopoly_tasks(&ex1.users[2], &ex1.servers[1]), 6.0);
        assert_eq!(monopoly_tasks(&ex1.users[0], &ex1.servers[1]), 0.0);
        let ex2 = fixtures::ex2();
        assert_eq!(monopoly_tasks(&ex2.users[2], &ex2.servers[1]), 12.0);
        let mut barred = ex1.users[2].clone();
        barred.declared_eligibility[1] = false;
        assert_eq!(monopoly_tasks(&barred, &ex1.servers[1]), 0.0);
    }

    #[test]
    fn gamma_matrix_examples() {
        let g = gamma_matrix(&fixtures::ex1());
        assert_eq!(g.rows(), &[vec![6.0, 0.0], vec![6.0, 0.0], vec![6.0, 6.0]]);
        let g3 = gamma_matrix(&fixtures::ex3());
        for (n, row) in EX3_GAMMA.iter().enumerate() {
            assert_eq!(g3.rows()[n], row.to_vec());
        }
        let mut spec = fixtures::ex1();
        spec.users[1].declared_eligibility = vec![false, false];
        assert_eq!(gamma_matrix(&spec).rows()[1], vec![0.0, 0.0]);
    }

    #[test]
    fn override_consistency() {
        assert!(check_override_consistent(&fixtures::ex1()).is_ok());
        assert!(check_override_consistent(&fixtures::ex3()).is_err());
        let spec = fixtures::ex1();
        let g = gamma_matrix(&spec).rows().to_vec();
        assert!(check_override_consistent(&spec.with_gamma_override(g)).is_ok());
    }

    #[test]
    fn task_totals_examples() {
        assert_eq!(task_totals(&fixtures::ex1_psdsf()), vec![3.0, 3.0, 6.0]);
        assert_eq!(task_totals(&Allocation::zeros(3, 2)), vec![0.0; 3]);
        assert_eq!(
            task_totals(&fixtures::ex3_psdsf()),
            vec![210.0, 105.0, 82.5, 27.5]
        );
    }

    #[test]
    fn vds_view_examples() {
        let spec = fixtures::ex2();
        let g = gamma_matrix(&spec);
        let view = vds_view(&fixtures::ex2_psdsf(), &g, &spec.weights());
        assert!((view.get(0, 0).unwrap() - 0.6).abs() < 1e-12);
        assert!((view.get(1, 0).unwrap() - 0.6).abs() < 1e-12);
        assert!((view.get(2, 0).unwrap() - 8.0 / 12.0).abs() < 1e-12);
        // EX1 capacities give gamma = min(9/1, 12/0.5) = 9 here.
        assert!((view.get(3, 0).unwrap() - 8.0 / 9.0).abs() < 1e-12);
        assert!((view.get(2, 1).unwrap() - 8.0 / 12.0).abs() < 1e-12);
        assert!((view.get(3, 1).unwrap() - 8.0 / 12.0).abs() < 1e-12);
        assert_eq!(view.get(0, 1), None);

        let zero = vds_view(&Allocation::zeros(4, 2), &g, &spec.weights());
        assert!(zero
            .normalized_vds
            .iter()
            .flatten()
            .flatten()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn rdm_feasibility_examples() {
        let spec = fixtures::ex1();
        let f = rdm_feasible(&spec, &fixtures::ex1_psdsf());
        assert!(f.passed());
        assert_eq!(f.slack[0][RAM], 0.0);
        assert_eq!(f.slack[1][RAM], 0.0);

        let mut over = fixtures::ex1_psdsf();
        over.set(2, 1, 7.0);
        let f = rdm_feasible(&spec, &over);
        assert!(!f.passed());
        assert_eq!(f.slack[1][RAM], -2.0);

        assert!(rdm_feasible(&spec, &Allocation::zeros(3, 2)).passed());
    }

    #[test]
    fn tdm_feasibility_examples() {
        let spec = ClusterSpec::from_parts(
            vec![vec![4.0]],
            vec![(vec![1.0], 1.0, vec![true]), (vec![2.0], 1.0, vec![true])],
        );
        let g = gamma_matrix(&spec);
        let alloc = Allocation::from_rows(vec![vec![2.0], vec![1.0]]);
        let f = tdm_feasible(&spec, &g, &alloc);
        assert!(f.passed());
        assert_eq!(f.slack[0][0], 0.0);

        let ex1 = fixtures::ex1();
        let f = tdm_feasible(&ex1, &gamma_matrix(&ex1), &fixtures::ex1_psdsf());
        assert!(f.passed());
        assert_eq!(f.slack, vec![vec![0.0], vec![0.0]]);

        let mut bad = fixtures::ex1_psdsf();
        bad.set(0, 1, 0.5);
        bad.set(2, 1, 5.0);
        let mut spec_ok = ex1.clone();
        spec_ok.users[0].declared_eligibility[1] = true;
        let f = tdm_feasible(&spec_ok, &gamma_matrix(&spec_ok), &bad);
        assert!(!f.passed());
    }

    #[test]
    fn saturation_examples() {
        let ex1 = fixtures::ex1();
        assert_eq!(
            saturated_resources(&ex1, &fixtures::ex1_psdsf(), 0),
            vec![RAM]
        );
        let ex2 = fixtures::ex2();
        assert_eq!(
            saturated_resources(&ex2, &fixtures::ex2_psdsf(), 1),
            vec![CPU, RAM]
        );
        assert!(saturated_resources(&ex1, &Allocation::zeros(3, 2), 0).is_empty());
    }

    #[test]
    fn bottleneck_examples() {
        let spec = fixtures::ex1();
        let g = gamma_matrix(&spec);
        let a = fixtures::ex1_psdsf();
        assert!(is_bottleneck(&spec, &g, &a, 0, 0, RAM));
        assert!(!is_bottleneck(&spec, &g, &a, 0, 0, CPU));
        assert!(!is_bottleneck(&spec, &g, &a, 2, 0, BW));
    }

    #[test]
    fn resource_division_verifier() {
        let spec = fixtures::ex1();
        let g = gamma_matrix(&spec);
        assert!(verify_psdsf_rdm(&spec, &g, &fixtures::ex1_psdsf()).passed());

        let v = verify_psdsf_rdm(&spec, &g, &fixtures::ex1_tsf());
        assert!(!v.passed());
        assert!(v
            .violations()
            .iter()
            .any(|x| x.subjects == vec![("user", 0), ("server", 0)]));

        let one = ClusterSpec::from_parts(
            vec![vec![3.0, 2.0]],
            vec![(vec![1.0, 1.0], 1.0, vec![true])],
        );
        let g1 = gamma_matrix(&one);
        let full = Allocation::from_rows(vec![vec![g1.get(0, 0)]]);
        assert!(verify_psdsf_rdm(&one, &g1, &full).passed());
    }

    #[test]
    fn time_division_verifier() {
        let spec = fixtures::ex1();
        let g = gamma_matrix(&spec);
        assert!(verify_psdsf_tdm(&spec, &g, &fixtures::ex1_psdsf()).passed());

        let ex3 = fixtures::ex3();
        let g3 = gamma_matrix(&ex3);
        let view = vds_view(&fixtures::ex3_psdsf(), &g3, &ex3.weights());
        assert!((view.get(0, 0).unwrap() - 1.3125).abs() < 1e-12);
        assert!((view.get(1, 0).unwrap() - 1.3125).abs() < 1e-12);
        assert!((view.get(0, 1).unwrap() - 210.0 / 680.0).abs() < 1e-12);
        assert!(verify_psdsf_tdm(&ex3, &g3, &fixtures::ex3_psdsf()).passed());

        let mut under = fixtures::ex1_psdsf();
        under.set(2, 1, 5.0);
        assert!(!verify_psdsf_tdm(&spec, &g, &under).passed());
    }
}
