//! Python bindings. Allocations cross the boundary as nested lists indexed
//! `[user][server]`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use psdsf_core::feasibility::Mode;
use psdsf_core::fixtures;
use psdsf_core::kernel::{gamma_matrix, verify_psdsf_rdm, verify_psdsf_tdm};
use psdsf_core::mechanism::Mechanism;
use psdsf_core::properties::{self, PropertyReport};
use psdsf_core::report;
use psdsf_core::scenario::Scenario;
use psdsf_core::sim::{self, Offsets, SimConfig, SimMechanism, SimTrace};
use psdsf_core::{Allocation, Verdict};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Scenario", frozen, module = "psdsf")]
struct PyScenario {
    inner: Scenario,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Scenario::from_json(text)
            .map(|inner| Self { inner })
            .map_err(value_error)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Scenario::from_path(path)
            .map(|inner| Self { inner })
            .map_err(value_error)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn user_ids(&self) -> Vec<String> {
        self.inner.user_ids.clone()
    }

    #[getter]
    fn server_ids(&self) -> Vec<String> {
        self.inner.server_ids.clone()
    }

    #[getter]
    fn resources(&self) -> Vec<String> {
        self.inner
            .spec
            .resources
            .iter()
            .map(|r| r.name.clone())
            .collect()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.spec.weights()
    }

    /// Monopoly task counts, `[user][server]`.
    fn gamma(&self) -> Vec<Vec<f64>> {
        gamma_matrix(&self.inner.spec).rows().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(users={}, servers={}, resources={})",
            self.inner.spec.num_users(),
            self.inner.spec.num_servers(),
            self.inner.spec.num_resources()
        )
    }
}

/// Result of running a mechanism. `allocation` is None for mechanisms that
/// only fix task totals.
#[pyclass(name = "Outcome", frozen, get_all, module = "psdsf")]
struct PyOutcome {
    mechanism: String,
    totals: Vec<f64>,
    allocation: Option<Vec<Vec<f64>>>,
    converged: bool,
}

#[pymethods]
impl PyOutcome {
    fn __repr__(&self) -> String {
        format!(
            "Outcome({}, totals={:?}, converged={})",
            self.mechanism, self.totals, self.converged
        )
    }
}

#[pyclass(name = "Check", frozen, get_all, module = "psdsf")]
struct PyCheck {
    name: String,
    applicable: bool,
    passed: bool,
    violations: Vec<String>,
}

#[pymethods]
impl PyCheck {
    fn __repr__(&self) -> String {
        let state = match (self.applicable, self.passed) {
            (false, _) => "n/a",
            (true, true) => "pass",
            (true, false) => "FAIL",
        };
        format!("Check({}: {state})", self.name)
    }

    fn __bool__(&self) -> bool {
        self.passed
    }
}

impl PyCheck {
    fn from_verdict(scenario: &Scenario, name: &str, verdict: &Verdict) -> Self {
        Self {
            name: name.to_string(),
            applicable: true,
            passed: verdict.passed(),
            violations: verdict
                .violations()
                .iter()
                .map(|v| scenario.describe(v))
                .collect(),
        }
    }

    fn from_report(scenario: &Scenario, report: &PropertyReport) -> Self {
        Self {
            applicable: report.applicable,
            ..Self::from_verdict(scenario, report.property, &report.verdict)
        }
    }
}

fn parse_mechanism(name: &str) -> PyResult<Mechanism> {
    name.parse().map_err(PyValueError::new_err)
}

fn to_allocation(scenario: &Scenario, rows: Vec<Vec<f64>>) -> PyResult<Allocation> {
    let (n, k) = (scenario.spec.num_users(), scenario.spec.num_servers());
    if rows.len() != n || rows.iter().any(|r| r.len() != k) {
        return Err(PyValueError::new_err(format!(
            "allocation must be {n} rows of {k} task counts"
        )));
    }
    Ok(Allocation::from_rows(rows))
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    match mode {
        "rdm" => Ok(Mode::Rdm),
        "tdm" => Ok(Mode::Tdm),
        other => Err(PyValueError::new_err(format!(
            "mode must be \"rdm\" or \"tdm\", got \"{other}\""
        ))),
    }
}

/// A built-in example cluster: `ex1`, `ex2`, `ex3` or `ex3_physical`.
#[pyfunction]
fn fixture(name: &str) -> PyResult<PyScenario> {
    let spec = match name {
        "ex1" => fixtures::ex1(),
        "ex2" => fixtures::ex2(),
        "ex3" => fixtures::ex3(),
        "ex3_physical" => fixtures::ex3_physical(),
        other => return Err(PyValueError::new_err(format!("unknown fixture `{other}`"))),
    };
    Ok(PyScenario {
        inner: Scenario::from_spec(spec),
    })
}

#[pyfunction]
fn mechanisms() -> Vec<&'static str> {
    Mechanism::ALL.iter().map(|m| m.name()).collect()
}

#[pyfunction]
fn solve(scenario: PyRef<'_, PyScenario>, mechanism: &str) -> PyResult<PyOutcome> {
    let m = parse_mechanism(mechanism)?;
    let out = m.run(&scenario.inner.spec).map_err(value_error)?;
    Ok(PyOutcome {
        mechanism: m.name().to_string(),
        totals: out.totals,
        allocation: out.allocation.map(Allocation::into_rows),
        converged: out.converged,
    })
}

/// Checks an allocation against the resource-division (`theorem=1`) or
/// time-division (`theorem=2`) characterization.
#[pyfunction]
fn verify(
    scenario: PyRef<'_, PyScenario>,
    allocation: Vec<Vec<f64>>,
    theorem: u8,
) -> PyResult<PyCheck> {
    let s = &scenario.inner;
    let alloc = to_allocation(s, allocation)?;
    let gamma = gamma_matrix(&s.spec);
    let verdict = match theorem {
        1 => verify_psdsf_rdm(&s.spec, &gamma, &alloc),
        2 => verify_psdsf_tdm(&s.spec, &gamma, &alloc),
        _ => return Err(PyValueError::new_err("theorem must be 1 or 2")),
    };
    Ok(PyCheck::from_verdict(
        s,
        &format!("theorem-{theorem}"),
        &verdict,
    ))
}

/// Sharing incentive, envy freeness, Pareto optimality, bottleneck and
/// single-resource fairness of an allocation.
#[pyfunction]
#[pyo3(signature = (scenario, allocation, mode = "rdm"))]
fn check_properties(
    scenario: PyRef<'_, PyScenario>,
    allocation: Vec<Vec<f64>>,
    mode: &str,
) -> PyResult<Vec<PyCheck>> {
    let s = &scenario.inner;
    let alloc = to_allocation(s, allocation)?;
    let mode = parse_mode(mode)?;
    let gamma = gamma_matrix(&s.spec);
    let reports = [
        properties::check_sharing_incentive(&s.spec, &gamma, &alloc.totals()),
        properties::check_envy_freeness(&s.spec, &gamma, &alloc),
        properties::check_pareto(&s.spec, &gamma, &alloc, mode),
        properties::check_bottleneck_fairness(&s.spec, &gamma, &alloc, mode),
        properties::check_single_resource_fairness(&s.spec, &gamma, &alloc, mode),
    ];
    Ok(reports.iter().map(|r| PyCheck::from_report(s, r)).collect())
}

/// Seeded misreport search for one user.
#[pyfunction]
#[pyo3(signature = (scenario, mechanism, user, trials = 100, seed = 0))]
fn strategy_check(
    scenario: PyRef<'_, PyScenario>,
    mechanism: &str,
    user: usize,
    trials: usize,
    seed: u64,
) -> PyResult<PyCheck> {
    let s = &scenario.inner;
    if user >= s.spec.num_users() {
        return Err(PyValueError::new_err(format!("no user with index {user}")));
    }
    let report =
        properties::strategy_harness(&s.spec, parse_mechanism(mechanism)?, user, trials, seed);
    Ok(PyCheck::from_report(s, &report))
}

#[pyclass(name = "Trace", frozen, module = "psdsf")]
struct PyTrace {
    trace: SimTrace,
    scenario: Scenario,
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn mode(&self) -> &'static str {
        self.trace.mode.as_str()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.trace.samples.iter().map(|s| s.time).collect()
    }

    /// Per sample, `[user][server]` task counts.
    #[getter]
    fn allocations(&self) -> Vec<Vec<Vec<f64>>> {
        self.trace
            .samples
            .iter()
            .map(|s| s.allocation.rows().to_vec())
            .collect()
    }

    /// Per sample, `[server][resource]` utilization.
    #[getter]
    fn utilization(&self) -> Vec<Vec<Vec<f64>>> {
        self.trace
            .samples
            .iter()
            .map(|s| s.utilization.clone())
            .collect()
    }

    #[getter]
    fn time_utilization(&self) -> Vec<Vec<f64>> {
        self.trace
            .samples
            .iter()
            .map(|s| s.time_utilization.clone())
            .collect()
    }

    #[getter]
    fn converged(&self) -> Vec<bool> {
        self.trace.samples.iter().map(|s| s.converged).collect()
    }

    fn all_feasible(&self) -> bool {
        self.trace
            .samples
            .iter()
            .all(|s| sim::sample_feasible(&self.scenario.spec, self.trace.mode, s))
    }

    /// Time-weighted mean `[server][resource]` utilization over a window.
    fn mean_utilization(&self, start: f64, end: f64) -> PyResult<Vec<Vec<f64>>> {
        sim::utilization_summary(&self.trace, (start, end))
            .map(|s| s.resources)
            .map_err(value_error)
    }

    fn to_csv(&self) -> String {
        report::trace_csv(&self.scenario, &self.trace)
    }

    fn __len__(&self) -> usize {
        self.trace.samples.len()
    }
}

/// Simulates the scenario's events. `offsets` is `"staggered"`,
/// `"random"` or a list with one phase per server.
#[pyfunction]
#[pyo3(signature = (scenario, horizon, mechanism = "psdsf-distributed", update_period = 1.0, recompute_period = 1.0, offsets = None, seed = 0))]
fn simulate(
    scenario: PyRef<'_, PyScenario>,
    horizon: f64,
    mechanism: &str,
    update_period: f64,
    recompute_period: f64,
    offsets: Option<&Bound<'_, PyAny>>,
    seed: u64,
) -> PyResult<PyTrace> {
    let offsets = match offsets {
        None => Offsets::Staggered,
        Some(o) => match o.extract::<String>() {
            Ok(k) if k == "staggered" => Offsets::Staggered,
            Ok(k) if k == "random" => Offsets::Random,
            Ok(k) => return Err(PyValueError::new_err(format!("unknown offsets `{k}`"))),
            Err(_) => Offsets::Explicit(o.extract::<Vec<f64>>()?),
        },
    };
    let config = SimConfig {
        horizon,
        update_period,
        offsets,
        mechanism: mechanism
            .parse::<SimMechanism>()
            .map_err(PyValueError::new_err)?,
        recompute_period,
        seed,
    };
    let s = &scenario.inner;
    let trace = sim::run_simulation(&s.spec, &s.events, &config).map_err(value_error)?;
    Ok(PyTrace {
        trace,
        scenario: s.clone(),
    })
}

#[pyfunction]
#[pyo3(signature = (scenario, allocation, converged = true))]
fn alloc_csv(
    scenario: PyRef<'_, PyScenario>,
    allocation: Vec<Vec<f64>>,
    converged: bool,
) -> PyResult<String> {
    let alloc = to_allocation(&scenario.inner, allocation)?;
    Ok(report::alloc_csv(&scenario.inner, &alloc, converged))
}

#[pyfunction]
fn parse_alloc_csv(scenario: PyRef<'_, PyScenario>, text: &str) -> PyResult<Vec<Vec<f64>>> {
    report::parse_alloc_csv(&scenario.inner, text)
        .map(Allocation::into_rows)
        .map_err(value_error)
}

#[pymodule]
fn psdsf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyOutcome>()?;
    m.add_class::<PyCheck>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(fixture, m)?)?;
    m.add_function(wrap_pyfunction!(mechanisms, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(check_properties, m)?)?;
    m.add_function(wrap_pyfunction!(strategy_check, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(alloc_csv, m)?)?;
    m.add_function(wrap_pyfunction!(parse_alloc_csv, m)?)?;
    Ok(())
}
