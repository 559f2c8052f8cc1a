//! Event-driven simulation of the distributed deployment.
//!
//! In distributed mode every server runs its own server procedure on a
//! fixed period, each with a phase offset, seeing only the current task
//! totals. Centralized modes instead recompute the whole allocation on
//! their own period. Users join and leave through timed events; a leaving
//! user's tasks are dropped at once.
//!
//! All firing times are `offset + k * period` for integer `k`, so the clock
//! does not drift. Everything that happens at one instant is applied in a
//! fixed order (events by kind then user, then firings by server id) and
//! then recorded as a single sample, so sample times strictly increase.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::feasibility::Mode;
use crate::kernel::{gamma_matrix, rdm_feasible, tdm_feasible, GammaMatrix, EPS_FEAS};
use crate::mechanism::Mechanism;
use crate::model::{validate_scenario, Allocation, ClusterSpec};
use crate::psdsf::PsDsf;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("event {index}: {message}")]
    InvalidEvent { index: usize, message: String },
    #[error("window [{start}, {end}] is empty or outside [0, {horizon}]")]
    BadWindow { start: f64, end: f64, horizon: f64 },
}

/// Declared before `Deactivate` so that simultaneous events apply joins
/// first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Activate,
    Deactivate,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Activate => "activate",
            EventKind::Deactivate => "deactivate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub user: usize,
}

impl Event {
    pub fn activate(time: f64, user: usize) -> Self {
        Self {
            time,
            kind: EventKind::Activate,
            user,
        }
    }

    pub fn deactivate(time: f64, user: usize) -> Self {
        Self {
            time,
            kind: EventKind::Deactivate,
            user,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimMechanism {
    /// Per-server procedures on staggered timers.
    Distributed,
    /// A centralized mechanism recomputed on `recompute_period`.
    Centralized(Mechanism),
}

impl SimMechanism {
    pub const CHOICES: [&'static str; 5] = [
        "psdsf-distributed",
        "psdsf-rdm",
        "psdsf-tdm",
        "tsf",
        "cdrfh",
    ];

    pub fn name(self) -> &'static str {
        match self {
            SimMechanism::Distributed => "psdsf-distributed",
            SimMechanism::Centralized(m) => m.name(),
        }
    }

    /// Feasibility regime the allocations follow on `spec`. The distributed
    /// mode time-shares exactly when the cluster carries a gamma override.
    pub fn mode(self, spec: &ClusterSpec) -> Mode {
        match self {
            SimMechanism::Distributed if spec.gamma_override.is_some() => Mode::Tdm,
            SimMechanism::Distributed => Mode::Rdm,
            SimMechanism::Centralized(m) => m.mode(spec),
        }
    }
}

impl fmt::Display for SimMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SimMechanism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "psdsf-distributed" {
            return Ok(SimMechanism::Distributed);
        }
        match s.parse::<Mechanism>() {
            Ok(
                m @ (Mechanism::PsdsfRdm | Mechanism::PsdsfTdm | Mechanism::Tsf | Mechanism::Cdrfh),
            ) => Ok(SimMechanism::Centralized(m)),
            _ => Err(format!(
                "unknown simulation mechanism `{s}` (expected one of {})",
                Self::CHOICES.join(", ")
            )),
        }
    }
}

/// Phase offsets of the per-server timers.
#[derive(Debug, Clone, PartialEq)]
pub enum Offsets {
    /// `i * period / K`.
    Staggered,
    /// Uniform in `[0, period)`, drawn from the configured seed.
    Random,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub update_period: f64,
    pub offsets: Offsets,
    pub mechanism: SimMechanism,
    pub recompute_period: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 300.0,
            update_period: 1.0,
            offsets: Offsets::Staggered,
            mechanism: SimMechanism::Distributed,
            recompute_period: 1.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn with_mechanism(mut self, mechanism: SimMechanism) -> Self {
        self.mechanism = mechanism;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    /// Resolved phase offsets for `servers` timers.
    pub fn phase_offsets(&self, servers: usize) -> Result<Vec<f64>, SimError> {
        let t = self.update_period;
        match &self.offsets {
            Offsets::Staggered => Ok((0..servers)
                .map(|i| i as f64 * t / servers as f64)
                .collect()),
            Offsets::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                Ok((0..servers).map(|_| rng.gen_range(0.0..t)).collect())
            }
            Offsets::Explicit(v) => {
                if v.len() != servers {
                    return Err(SimError::InvalidConfig(format!(
                        "{} offsets given for {servers} servers",
                        v.len()
                    )));
                }
                if let Some(o) = v.iter().find(|o| !(o.is_finite() && **o >= 0.0 && **o < t)) {
                    return Err(SimError::InvalidConfig(format!(
                        "offset {o} outside [0, {t})"
                    )));
                }
                Ok(v.clone())
            }
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(SimError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("horizon", self.horizon)?;
        positive("update_period", self.update_period)?;
        positive("recompute_period", self.recompute_period)
    }
}

/// State of the cluster right after one instant's events and firings.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub time: f64,
    pub allocation: Allocation,
    /// `[server][resource]` fraction of capacity in use.
    pub utilization: Vec<Vec<f64>>,
    /// Per-server `sum_n x_{n,i} / gamma_{n,i}`.
    pub time_utilization: Vec<f64>,
    pub active: Vec<bool>,
    /// False when a centralized solve ran out of budget at this instant.
    pub converged: bool,
    /// Servers that fired at this instant.
    pub fired: Vec<usize>,
    /// Whether an event was applied at this instant.
    pub had_event: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub mechanism: SimMechanism,
    pub mode: Mode,
    pub horizon: f64,
    pub samples: Vec<Sample>,
}

impl SimTrace {
    /// The sample in force at `time`.
    pub fn at(&self, time: f64) -> Option<&Sample> {
        let idx = self.samples.partition_point(|s| s.time <= time);
        idx.checked_sub(1).map(|i| &self.samples[i])
    }
}

/// Sorts events into application order and checks them against `spec`.
pub fn normalize_events(spec: &ClusterSpec, events: &[Event]) -> Result<Vec<Event>, SimError> {
    for (index, e) in events.iter().enumerate() {
        if !(e.time.is_finite() && e.time >= 0.0) {
            return Err(SimError::InvalidEvent {
                index,
                message: format!("time {} is not a finite non-negative number", e.time),
            });
        }
        if e.user >= spec.num_users() {
            return Err(SimError::InvalidEvent {
                index,
                message: format!("unknown user {}", e.user),
            });
        }
    }
    let mut sorted = events.to_vec();
    sorted.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(a.kind.cmp(&b.kind))
            .then(a.user.cmp(&b.user))
    });
    Ok(sorted)
}

/// Per-resource and per-server time utilization of `alloc`. Zero-capacity
/// resources report zero.
pub fn utilization(
    spec: &ClusterSpec,
    gamma: &GammaMatrix,
    alloc: &Allocation,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let resources = (0..spec.num_servers())
        .map(|i| {
            alloc
                .server_usage(spec, i)
                .iter()
                .enumerate()
                .map(|(r, used)| {
                    let c = spec.capacity(i, r);
                    if c > 0.0 {
                        used / c
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let time = (0..spec.num_servers())
        .map(|i| {
            (0..spec.num_users())
                .filter(|&n| gamma.get(n, i) > 0.0)
                .map(|n| alloc.get(n, i) / gamma.get(n, i))
                .sum()
        })
        .collect();
    (resources, time)
}

/// Copy of `spec` keeping only the users flagged in `keep`, in order.
fn sub_spec(spec: &ClusterSpec, keep: &[bool]) -> ClusterSpec {
    let mut sub = spec.clone();
    sub.users = spec
        .users
        .iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|(u, _)| u.clone())
        .collect();
    if let Some(g) = &spec.gamma_override {
        sub.gamma_override = Some(
            g.iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(r, _)| r.clone())
                .collect(),
        );
    }
    sub
}

struct Centralized<'a> {
    spec: &'a ClusterSpec,
    mechanism: Mechanism,
    cache: HashMap<Vec<bool>, (Allocation, bool)>,
}

impl Centralized<'_> {
    /// Fresh allocation for the active users; a rejected solve leaves every
    /// user empty and is flagged as not converged.
    fn solve(&mut self, active: &[bool]) -> (Allocation, bool) {
        if let Some(hit) = self.cache.get(active) {
            return hit.clone();
        }
        let (k, n) = (self.spec.num_servers(), self.spec.num_users());
        let mut alloc = Allocation::zeros(n, k);
        let mut converged = true;
        if active.iter().any(|&a| a) {
            let sub = sub_spec(self.spec, active);
            match self.mechanism.run(&sub) {
                Ok(out) => {
                    converged = out.converged;
                    if let Some(a) = out.allocation {
                        let users = (0..n).filter(|&u| active[u]);
                        for (row, u) in a.rows().iter().zip(users) {
                            for (i, &x) in row.iter().enumerate() {
                                alloc.set(u, i, x);
                            }
                        }
                    }
                }
                Err(_) => converged = false,
            }
        }
        self.cache
            .insert(active.to_vec(), (alloc.clone(), converged));
        (alloc, converged)
    }
}

/// Ticks `offset + k * period` for `k >= 0` inside `[0, horizon]`.
fn ticks(offset: f64, period: f64, horizon: f64) -> impl Iterator<Item = f64> {
    (0u64..)
        .map(move |k| offset + k as f64 * period)
        .take_while(move |&t| t <= horizon)
}

#[derive(Default)]
struct Instant {
    events: Vec<Event>,
    fired: Vec<usize>,
    recompute: bool,
}

/// Runs the simulation. Every user starts active. Identical inputs give
/// bit-identical traces.
pub fn run_simulation(
    spec: &ClusterSpec,
    events: &[Event],
    config: &SimConfig,
) -> Result<SimTrace, SimError> {
    let verdict = validate_scenario(spec);
    if !verdict.passed() {
        let msg: Vec<String> = verdict.violations().iter().map(|v| v.to_string()).collect();
        return Err(SimError::InvalidScenario(msg.join("; ")));
    }
    config.validate()?;
    let events = normalize_events(spec, events)?;
    let (k, n) = (spec.num_servers(), spec.num_users());
    let mode = config.mechanism.mode(spec);
    let full_gamma = gamma_matrix(spec);

    // Schedule keyed by the exact bit pattern of each instant.
    let mut schedule: BTreeMap<u64, Instant> = BTreeMap::new();
    let key = |t: f64| t.to_bits();
    schedule.entry(key(0.0)).or_default();
    for e in &events {
        if e.time <= config.horizon {
            schedule.entry(key(e.time)).or_default().events.push(*e);
        }
    }
    match config.mechanism {
        SimMechanism::Distributed => {
            for (i, off) in config.phase_offsets(k)?.into_iter().enumerate() {
                for t in ticks(off, config.update_period, config.horizon) {
                    schedule.entry(key(t)).or_default().fired.push(i);
                }
            }
        }
        SimMechanism::Centralized(_) => {
            for t in ticks(0.0, config.recompute_period, config.horizon) {
                schedule.entry(key(t)).or_default().recompute = true;
            }
        }
    }

    let mut active = vec![true; n];
    let mut gamma = full_gamma.clone();
    let mut alloc = PsDsf::new(spec, &gamma, mode).init_per_server_drf();
    let mut central = match config.mechanism {
        SimMechanism::Centralized(m) => Some(Centralized {
            spec,
            mechanism: m,
            cache: HashMap::new(),
        }),
        SimMechanism::Distributed => None,
    };
    let mut samples = Vec::with_capacity(schedule.len());
    let mut first = true;
    // Non-negative doubles order like their bit patterns.
    for (bits, instant) in schedule {
        let time = f64::from_bits(bits);
        let mut converged = true;
        for e in &instant.events {
            match e.kind {
                EventKind::Activate => active[e.user] = true,
                EventKind::Deactivate => {
                    active[e.user] = false;
                    alloc.clear_user(e.user);
                }
            }
        }
        if !instant.events.is_empty() {
            gamma = full_gamma.restricted_to(&active);
        }
        if first {
            // The starting point reflects who is active at time zero.
            alloc = PsDsf::new(spec, &gamma, mode).init_per_server_drf();
            first = false;
        }
        let psdsf = PsDsf::new(spec, &gamma, mode);
        for &i in &instant.fired {
            psdsf.server_procedure(&mut alloc, i);
        }
        if instant.recompute {
            if let Some(c) = central.as_mut() {
                let (a, ok) = c.solve(&active);
                alloc = a;
                converged = ok;
            }
        }
        let (utilization, time_utilization) = utilization(spec, &full_gamma, &alloc);
        samples.push(Sample {
            time,
            allocation: alloc.clone(),
            utilization,
            time_utilization,
            active: active.clone(),
            converged,
            fired: instant.fired,
            had_event: !instant.events.is_empty(),
        });
    }
    Ok(SimTrace {
        mechanism: config.mechanism,
        mode,
        horizon: config.horizon,
        samples,
    })
}

/// Whether a sample respects the capacity rules of the trace's mode.
pub fn sample_feasible(spec: &ClusterSpec, mode: Mode, sample: &Sample) -> bool {
    let gamma = gamma_matrix(spec);
    let within = |u: f64| u <= 1.0 + EPS_FEAS;
    let feasible = match mode {
        Mode::Rdm => rdm_feasible(spec, &sample.allocation).passed(),
        Mode::Tdm => tdm_feasible(spec, &gamma, &sample.allocation).passed(),
    };
    feasible
        && match mode {
            Mode::Rdm => sample.utilization.iter().flatten().copied().all(within),
            Mode::Tdm => sample.time_utilization.iter().copied().all(within),
        }
}

/// Time-weighted mean utilization over a window.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilizationSummary {
    pub window: (f64, f64),
    /// `[server][resource]`.
    pub resources: Vec<Vec<f64>>,
    /// Per server.
    pub time: Vec<f64>,
}

/// Means of the piecewise-constant utilization over `[start, end]`; each
/// sample holds until the next one.
pub fn utilization_summary(
    trace: &SimTrace,
    window: (f64, f64),
) -> Result<UtilizationSummary, SimError> {
    let (start, end) = window;
    let bad = SimError::BadWindow {
        start,
        end,
        horizon: trace.horizon,
    };
    if !(start.is_finite()
        && end.is_finite()
        && start >= 0.0
        && end <= trace.horizon
        && end > start)
    {
        return Err(bad);
    }
    let Some(first) = trace.samples.first() else {
        return Err(bad);
    };
    let mut resources =
        vec![vec![0.0; first.utilization.first().map_or(0, Vec::len)]; first.utilization.len()];
    let mut time = vec![0.0; first.time_utilization.len()];
    for (idx, s) in trace.samples.iter().enumerate() {
        let next = trace.samples.get(idx + 1).map_or(trace.horizon, |n| n.time);
        let span = next.min(end) - s.time.max(start);
        if span <= 0.0 {
            continue;
        }
        for (acc, u) in resources.iter_mut().zip(&s.utilization) {
            for (a, v) in acc.iter_mut().zip(u) {
                *a += v * span;
            }
        }
        for (a, v) in time.iter_mut().zip(&s.time_utilization) {
            *a += v * span;
        }
    }
    let len = end - start;
    resources.iter_mut().flatten().for_each(|v| *v /= len);
    time.iter_mut().for_each(|v| *v /= len);
    Ok(UtilizationSummary {
        window,
        resources,
        time,
    })
}
