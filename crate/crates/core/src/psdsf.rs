//! Per-server dominant-share fair (PS-DSF) allocation.
//!
//! The solver starts from an independent weighted DRF allocation on every
//! server and then repeatedly runs a *server procedure* on each server in
//! turn. A server procedure only looks at its own server's resources and at
//! each user's total task count, so it can also run on its own, as in the
//! distributed simulator (see [`crate::sim`]).
//!
//! Within a server procedure, users eligible for the server are ranked by
//! normalized virtual dominant share `x_n / (w_n * gamma_{n,i})`. Users at
//! the minimum either already have a bottleneck resource, and are retired,
//! or receive resources released by the users holding the largest shares on
//! the saturated resources they need.
//!
//! Time-sharing is handled by the same machinery: each server then has a
//! single resource, time, with capacity 1, and user `n` needs
//! `1 / gamma_{n,i}` of it per task.

use crate::feasibility::Mode;
use crate::kernel::{
    check_override_consistent, gamma_matrix, GammaMatrix, KernelError, EPS_SAT, EPS_TIE, EPS_ZERO,
};
use crate::model::{validate_scenario, Allocation, ClusterSpec};
use thiserror::Error;

/// Relative change below which a sweep counts as making no update.
pub const EPS_CONV: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("unsupported input: {0}")]
    Unsupported(String),
}

/// Scratch state of one server procedure step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServerWorkState {
    /// Users still lacking an identified bottleneck at this server.
    pub active_users: Vec<usize>,
    /// Smallest normalized virtual dominant share among active users.
    pub min_vds: f64,
    /// Active users attaining `min_vds`.
    pub min_set: Vec<usize>,
    /// Saturated resources demanded by some user of `min_set`.
    pub candidate_resources: Vec<usize>,
    /// Free resources plus the bundles released by the chosen holders.
    pub free: Vec<f64>,
    /// Weighted demand mass of `min_set`.
    pub demand_mass: Vec<f64>,
    /// Largest raise of `min_vds` the freed resources could support.
    pub headroom: f64,
    /// Fraction of that raise actually applied, in (0, 1].
    pub step: f64,
    /// Holder released for each candidate resource, as (resource, user).
    pub released: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Updated,
    /// The freed resources cannot raise the minimum share; the allocation
    /// was left unchanged.
    NoProgress,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProcedureReport {
    /// Number of reallocation steps performed.
    pub updates: usize,
    /// False when the procedure stalled or hit its step budget.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub allocation: Allocation,
    /// Number of full sweeps over the servers.
    pub iterations: usize,
    pub converged: bool,
    /// Largest relative allocation change in the final sweep.
    pub residual: f64,
}

impl SolveReport {
    pub fn totals(&self) -> Vec<f64> {
        self.allocation.totals()
    }
}

/// Per-server capacities and per-user demands under a sharing mode.
struct ServerView {
    capacities: Vec<f64>,
    demand: Vec<Vec<f64>>,
}

/// PS-DSF machinery bound to a cluster, its monopoly task counts, and a
/// sharing mode.
#[derive(Debug, Clone, Copy)]
pub struct PsDsf<'a> {
    spec: &'a ClusterSpec,
    gamma: &'a GammaMatrix,
    mode: Mode,
}

impl<'a> PsDsf<'a> {
    pub fn new(spec: &'a ClusterSpec, gamma: &'a GammaMatrix, mode: Mode) -> Self {
        Self { spec, gamma, mode }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    fn view(&self, server: usize) -> ServerView {
        match self.mode {
            Mode::Rdm => ServerView {
                capacities: self.spec.servers[server].capacities.clone(),
                demand: self.spec.users.iter().map(|u| u.demand.clone()).collect(),
            },
            Mode::Tdm => ServerView {
                capacities: vec![1.0],
                demand: (0..self.spec.num_users())
                    .map(|n| {
                        let g = self.gamma.get(n, server);
                        vec![if g > 0.0 { 1.0 / g } else { 0.0 }]
                    })
                    .collect(),
            },
        }
    }

    /// Rate at which user `n`'s tasks grow per unit of normalized share.
    fn rate(&self, n: usize, server: usize) -> f64 {
        self.spec.users[n].weight * self.gamma.get(n, server)
    }

    fn vds(&self, totals: &[f64], n: usize, server: usize) -> f64 {
        totals[n] / self.rate(n, server)
    }

    fn usage(view: &ServerView, alloc: &Allocation, server: usize) -> Vec<f64> {
        let mut used = vec![0.0; view.capacities.len()];
        for (n, d) in view.demand.iter().enumerate() {
            let x = alloc.get(n, server);
            if x > 0.0 {
                for (u, dr) in used.iter_mut().zip(d) {
                    *u += x * dr;
                }
            }
        }
        used
    }

    fn consumes(view: &ServerView, alloc: &Allocation, n: usize, server: usize, r: usize) -> bool {
        let a = alloc.get(n, server) * view.demand[n][r];
        a > 0.0 && a > EPS_ZERO * view.capacities[r]
    }

    /// Weighted DRF on every server independently: eligible users grow in
    /// proportion to `weight * gamma` until a resource they need saturates.
    pub fn init_per_server_drf(&self) -> Allocation {
        let mut alloc = Allocation::zeros(self.spec.num_users(), self.spec.num_servers());
        for i in 0..self.spec.num_servers() {
            let view = self.view(i);
            let mut growing: Vec<usize> = self.gamma.eligible_users(i).collect();
            let mut used = vec![0.0; view.capacities.len()];
            let mut level = 0.0;
            while !growing.is_empty() {
                let mut mass = vec![0.0; view.capacities.len()];
                for &n in &growing {
                    for (m, d) in mass.iter_mut().zip(&view.demand[n]) {
                        *m += self.rate(n, i) * d;
                    }
                }
                let step = mass
                    .iter()
                    .zip(&view.capacities)
                    .zip(&used)
                    .filter(|((&m, _), _)| m > 0.0)
                    .map(|((m, c), u)| ((c - u) / m).max(0.0))
                    .fold(f64::INFINITY, f64::min);
                if !step.is_finite() {
                    break;
                }
                level += step;
                for &n in &growing {
                    alloc.set(n, i, self.rate(n, i) * level);
                }
                used = Self::usage(&view, &alloc, i);
                let saturated: Vec<bool> = view
                    .capacities
                    .iter()
                    .zip(&used)
                    .map(|(&c, &u)| c > 0.0 && u >= c * (1.0 - EPS_SAT))
                    .collect();
                let before = growing.len();
                growing.retain(|&n| {
                    !view.demand[n]
                        .iter()
                        .zip(&saturated)
                        .any(|(&d, &s)| d > 0.0 && s)
                });
                if growing.len() == before {
                    break;
                }
            }
        }
        alloc
    }

    /// Fills the ranking part of `state` (active set, minimum share, its
    /// users, candidate resources) for the current allocation.
    fn rank(
        &self,
        view: &ServerView,
        alloc: &Allocation,
        totals: &[f64],
        server: usize,
        state: &mut ServerWorkState,
    ) {
        state.min_vds = state
            .active_users
            .iter()
            .map(|&n| self.vds(totals, n, server))
            .fold(f64::INFINITY, f64::min);
        state.min_set = state
            .active_users
            .iter()
            .copied()
            .filter(|&n| self.vds(totals, n, server) <= state.min_vds + EPS_TIE)
            .collect();
        let used = Self::usage(view, alloc, server);
        state.candidate_resources = (0..view.capacities.len())
            .filter(|&r| {
                let c = view.capacities[r];
                c > 0.0
                    && used[r] >= c * (1.0 - EPS_SAT)
                    && state.min_set.iter().any(|&n| view.demand[n][r] > 0.0)
            })
            .collect();
    }

    /// Builds the work state for a fresh procedure run at `server`.
    pub fn work_state(&self, alloc: &Allocation, server: usize) -> ServerWorkState {
        let mut state = ServerWorkState {
            active_users: self.gamma.eligible_users(server).collect(),
            ..ServerWorkState::default()
        };
        if !state.active_users.is_empty() {
            let view = self.view(server);
            self.rank(&view, alloc, &alloc.totals(), server, &mut state);
        }
        state
    }

    /// A candidate resource whose every consumer sits at the minimum share,
    /// making it a bottleneck for the minimum users.
    fn settled_resource(
        &self,
        view: &ServerView,
        alloc: &Allocation,
        totals: &[f64],
        server: usize,
        state: &ServerWorkState,
    ) -> Option<usize> {
        state.candidate_resources.iter().copied().find(|&r| {
            (0..self.spec.num_users())
                .filter(|&m| Self::consumes(view, alloc, m, server, r))
                .all(|m| self.vds(totals, m, server) <= state.min_vds + EPS_TIE)
        })
    }

    /// Releases the largest-share holder of each candidate resource and
    /// hands the freed resources to the minimum-share users, as far as the
    /// share ordering allows.
    pub fn update_allocation(
        &self,
        alloc: &mut Allocation,
        server: usize,
        state: &mut ServerWorkState,
    ) -> StepOutcome {
        let view = self.view(server);
        let totals = alloc.totals();
        self.update_with(&view, alloc, &totals, server, state)
    }

    fn update_with(
        &self,
        view: &ServerView,
        alloc: &mut Allocation,
        totals: &[f64],
        server: usize,
        state: &mut ServerWorkState,
    ) -> StepOutcome {
        let used = Self::usage(view, alloc, server);
        let mut free: Vec<f64> = view
            .capacities
            .iter()
            .zip(&used)
            .map(|(c, u)| (c - u).max(0.0))
            .collect();

        state.released.clear();
        let mut holders: Vec<usize> = Vec::new();
        for &r in &state.candidate_resources {
            let holder = state
                .active_users
                .iter()
                .copied()
                .filter(|&n| Self::consumes(view, alloc, n, server, r))
                .fold(None::<(usize, f64)>, |best, n| {
                    let v = self.vds(totals, n, server);
                    match best {
                        Some((_, bv)) if bv >= v => best,
                        _ => Some((n, v)),
                    }
                });
            if let Some((n, _)) = holder {
                state.released.push((r, n));
                if !holders.contains(&n) {
                    holders.push(n);
                    let x = alloc.get(n, server);
                    for (f, d) in free.iter_mut().zip(&view.demand[n]) {
                        *f += x * d;
                    }
                }
            }
        }

        let mut mass = vec![0.0; view.capacities.len()];
        for &n in &state.min_set {
            for (m, d) in mass.iter_mut().zip(&view.demand[n]) {
                *m += self.rate(n, server) * d;
            }
        }
        let headroom = free
            .iter()
            .zip(&mass)
            .filter(|(_, &m)| m > 0.0)
            .map(|(f, m)| f / m)
            .fold(f64::INFINITY, f64::min);
        state.free = free;
        state.demand_mass = mass;
        state.headroom = headroom;

        if !headroom.is_finite() || headroom <= EPS_CONV * state.min_vds.max(1.0) {
            state.step = 0.0;
            return StepOutcome::NoProgress;
        }

        let mut step: f64 = 1.0;
        for &n in &holders {
            let rate = self.rate(n, server);
            let gap = self.vds(totals, n, server) - state.min_vds;
            step = step.min(gap / (headroom + alloc.get(n, server) / rate));
        }
        if !(step > 0.0) {
            state.step = 0.0;
            return StepOutcome::NoProgress;
        }
        state.step = step;

        for &n in &state.min_set {
            let x = alloc.get(n, server) + step * self.rate(n, server) * headroom;
            alloc.set(n, server, x);
        }
        for &n in &holders {
            let x = (1.0 - step) * alloc.get(n, server);
            let negligible = x <= EPS_ZERO * self.gamma.get(n, server);
            alloc.set(n, server, if negligible { 0.0 } else { x });
        }
        StepOutcome::Updated
    }

    fn step_budget(&self) -> usize {
        let size = self.spec.num_users() + self.spec.num_resources() + 1;
        100 * size * size
    }

    /// Runs the server procedure at `server` until every eligible user has a
    /// bottleneck there, or no further progress is possible.
    pub fn server_procedure(&self, alloc: &mut Allocation, server: usize) -> ProcedureReport {
        let mut report = ProcedureReport::default();
        let mut state = ServerWorkState {
            active_users: self.gamma.eligible_users(server).collect(),
            ..ServerWorkState::default()
        };
        if state.active_users.is_empty() {
            report.converged = true;
            return report;
        }
        let view = self.view(server);
        let mut totals = alloc.totals();
        for _ in 0..self.step_budget() {
            if state.active_users.is_empty() {
                report.converged = true;
                return report;
            }
            self.rank(&view, alloc, &totals, server, &mut state);
            if let Some(r) = self.settled_resource(&view, alloc, &totals, server, &state) {
                state.active_users.retain(|&n| view.demand[n][r] <= 0.0);
                continue;
            }
            let before: Vec<f64> = (0..totals.len()).map(|n| alloc.get(n, server)).collect();
            match self.update_with(&view, alloc, &totals, server, &mut state) {
                StepOutcome::Updated => {
                    report.updates += 1;
                    for (n, t) in totals.iter_mut().enumerate() {
                        *t += alloc.get(n, server) - before[n];
                    }
                }
                StepOutcome::NoProgress => return report,
            }
        }
        report
    }

    /// Sweeps the servers in ascending order until a sweep changes nothing,
    /// starting from `alloc`.
    pub fn sweep_until_stable(&self, mut alloc: Allocation, max_sweeps: usize) -> SolveReport {
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        let mut stalled = false;
        while iterations < max_sweeps {
            iterations += 1;
            let before = alloc.clone();
            stalled = false;
            for i in 0..self.spec.num_servers() {
                let rep = self.server_procedure(&mut alloc, i);
                stalled |= !rep.converged;
            }
            residual = alloc.max_relative_change(&before);
            if residual <= EPS_CONV {
                break;
            }
        }
        SolveReport {
            allocation: alloc,
            iterations,
            converged: residual <= EPS_CONV && !stalled,
            residual,
        }
    }

    pub fn default_max_sweeps(&self) -> usize {
        100 * self.spec.num_servers() * self.spec.num_users()
    }

    /// Full solve: per-server DRF start, then sweeps.
    pub fn solve(&self, max_sweeps: Option<usize>) -> SolveReport {
        let budget = max_sweeps.unwrap_or_else(|| self.default_max_sweeps());
        self.sweep_until_stable(self.init_per_server_drf(), budget.max(1))
    }
}

/// Solver settings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveOptions {
    /// Sweep budget; defaults to `100 * servers * users`.
    pub max_sweeps: Option<usize>,
}

fn validated(spec: &ClusterSpec) -> Result<(), SolveError> {
    let verdict = validate_scenario(spec);
    if verdict.passed() {
        Ok(())
    } else {
        let msg = verdict
            .violations()
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        Err(SolveError::InvalidScenario(msg))
    }
}

pub fn init_per_server_drf(spec: &ClusterSpec, gamma: &GammaMatrix) -> Allocation {
    PsDsf::new(spec, gamma, Mode::Rdm).init_per_server_drf()
}

/// One resource-division server procedure on a copy of `alloc`.
pub fn server_procedure(
    spec: &ClusterSpec,
    gamma: &GammaMatrix,
    alloc: &Allocation,
    server: usize,
) -> (Allocation, ProcedureReport) {
    let mut out = alloc.clone();
    let report = PsDsf::new(spec, gamma, Mode::Rdm).server_procedure(&mut out, server);
    (out, report)
}

pub fn solve_rdm(spec: &ClusterSpec) -> Result<SolveReport, SolveError> {
    solve_rdm_with(spec, SolveOptions::default())
}

pub fn solve_rdm_with(
    spec: &ClusterSpec,
    options: SolveOptions,
) -> Result<SolveReport, SolveError> {
    validated(spec)?;
    check_override_consistent(spec)?;
    let gamma = gamma_matrix(spec);
    Ok(PsDsf::new(spec, &gamma, Mode::Rdm).solve(options.max_sweeps))
}

pub fn solve_tdm(spec: &ClusterSpec) -> Result<SolveReport, SolveError> {
    solve_tdm_with(spec, SolveOptions::default())
}

pub fn solve_tdm_with(
    spec: &ClusterSpec,
    options: SolveOptions,
) -> Result<SolveReport, SolveError> {
    validated(spec)?;
    let gamma = gamma_matrix(spec);
    Ok(PsDsf::new(spec, &gamma, Mode::Tdm).solve(options.max_sweeps))
}
