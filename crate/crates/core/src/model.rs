//! Cluster, user and allocation types shared by every mechanism.
//!
//! Users and servers are addressed by dense 0-based indices. Human-readable
//! names only exist at the scenario-file boundary (see [`crate::scenario`]).

use std::fmt;

/// A resource type, e.g. CPU cores or memory.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ResourceId {
    pub index: usize,
    pub name: String,
}

impl ResourceId {
    pub fn new(index: usize, name: impl Into<String>) -> Self {
        Self {
            index,
            name: name.into(),
        }
    }
}

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerSpec {
    pub id: usize,
    /// Capacity per resource type, in native units.
    pub capacities: Vec<f64>,
}

impl ServerSpec {
    pub fn new(id: usize, capacities: Vec<f64>) -> Self {
        Self { id, capacities }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserSpec {
    pub id: usize,
    /// Resources consumed by one task.
    pub demand: Vec<f64>,
    pub weight: f64,
    /// Placement constraints: `declared_eligibility[i]` is true when the
    /// user's tasks may run on server `i`.
    pub declared_eligibility: Vec<bool>,
}

impl UserSpec {
    pub fn new(id: usize, demand: Vec<f64>, weight: f64, declared_eligibility: Vec<bool>) -> Self {
        Self {
            id,
            demand,
            weight,
            declared_eligibility,
        }
    }

    /// Builds a user allowed on every one of `servers` servers.
    pub fn unconstrained(id: usize, demand: Vec<f64>, weight: f64, servers: usize) -> Self {
        Self::new(id, demand, weight, vec![true; servers])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub resources: Vec<ResourceId>,
    pub servers: Vec<ServerSpec>,
    pub users: Vec<UserSpec>,
    /// Optional N×K matrix replacing the computed monopoly task counts.
    pub gamma_override: Option<Vec<Vec<f64>>>,
}

impl ClusterSpec {
    /// Builds a spec, naming resources `r0`, `r1`, ... and numbering
    /// servers and users by position.
    pub fn from_parts(capacities: Vec<Vec<f64>>, users: Vec<(Vec<f64>, f64, Vec<bool>)>) -> Self {
        let m = capacities.first().map_or(0, Vec::len);
        Self {
            resources: (0..m)
                .map(|r| ResourceId::new(r, format!("r{r}")))
                .collect(),
            servers: capacities
                .into_iter()
                .enumerate()
                .map(|(i, c)| ServerSpec::new(i, c))
                .collect(),
            users: users
                .into_iter()
                .enumerate()
                .map(|(n, (d, w, e))| UserSpec::new(n, d, w, e))
                .collect(),
            gamma_override: None,
        }
    }

    pub fn with_resource_names<S: Into<String>>(
        mut self,
        names: impl IntoIterator<Item = S>,
    ) -> Self {
        self.resources = names
            .into_iter()
            .enumerate()
            .map(|(r, s)| ResourceId::new(r, s))
            .collect();
        self
    }

    pub fn with_gamma_override(mut self, gamma: Vec<Vec<f64>>) -> Self {
        self.gamma_override = Some(gamma);
        self
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_servers(&self) -> usize {
        self.servers.len()
    }

    pub fn num_resources(&self) -> usize {
        self.resources.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.users.iter().map(|u| u.weight).collect()
    }

    pub fn capacity(&self, server: usize, resource: usize) -> f64 {
        self.servers[server].capacities[resource]
    }

    pub fn demand(&self, user: usize, resource: usize) -> f64 {
        self.users[user].demand[resource]
    }

    /// Resource capacities summed over all servers.
    pub fn pooled_capacities(&self) -> Vec<f64> {
        let mut pool = vec![0.0; self.num_resources()];
        for s in &self.servers {
            for (p, c) in pool.iter_mut().zip(&s.capacities) {
                *p += c;
            }
        }
        pool
    }
}

/// Fractional task counts `tasks[n][i]` for user `n` on server `i`.
///
/// Resource bundles are always `tasks[n][i] * demand[n]` and are never
/// stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    tasks: Vec<Vec<f64>>,
}

impl Allocation {
    pub fn zeros(users: usize, servers: usize) -> Self {
        Self {
            tasks: vec![vec![0.0; servers]; users],
        }
    }

    pub fn from_rows(tasks: Vec<Vec<f64>>) -> Self {
        Self { tasks }
    }

    pub fn num_users(&self) -> usize {
        self.tasks.len()
    }

    pub fn num_servers(&self) -> usize {
        self.tasks.first().map_or(0, Vec::len)
    }

    #[inline]
    pub fn get(&self, user: usize, server: usize) -> f64 {
        self.tasks[user][server]
    }

    #[inline]
    pub fn set(&mut self, user: usize, server: usize, value: f64) {
        self.tasks[user][server] = value;
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.tasks
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.tasks
    }

    /// Total tasks of one user across servers.
    pub fn total(&self, user: usize) -> f64 {
        self.tasks[user].iter().sum()
    }

    pub fn totals(&self) -> Vec<f64> {
        (0..self.num_users()).map(|n| self.total(n)).collect()
    }

    pub fn clear_user(&mut self, user: usize) {
        self.tasks[user].iter_mut().for_each(|x| *x = 0.0);
    }

    /// Largest absolute entry-wise difference, relative to `max(1, |x|)`.
    pub fn max_relative_change(&self, other: &Allocation) -> f64 {
        self.tasks
            .iter()
            .flatten()
            .zip(other.tasks.iter().flatten())
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1.0))
            .fold(0.0, f64::max)
    }

    /// Resources used on `server` under non-wasteful bundles.
    pub fn server_usage(&self, spec: &ClusterSpec, server: usize) -> Vec<f64> {
        let mut used = vec![0.0; spec.num_resources()];
        for (n, user) in spec.users.iter().enumerate() {
            let x = self.tasks[n][server];
            if x > 0.0 {
                for (u, d) in used.iter_mut().zip(&user.demand) {
                    *u += x * d;
                }
            }
        }
        used
    }
}

/// One failed check: which users/servers/resources, what was measured,
/// and the threshold it was compared against.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub subjects: Vec<(&'static str, usize)>,
    pub measured: f64,
    pub threshold: f64,
    pub description: String,
}

impl Violation {
    pub fn new(description: impl Into<String>) -> Self {
        Self {
            subjects: Vec::new(),
            measured: f64::NAN,
            threshold: f64::NAN,
            description: description.into(),
        }
    }

    pub fn subject(mut self, kind: &'static str, index: usize) -> Self {
        self.subjects.push((kind, index));
        self
    }

    pub fn values(mut self, measured: f64, threshold: f64) -> Self {
        self.measured = measured;
        self.threshold = threshold;
        self
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (kind, idx) in &self.subjects {
            write!(f, "{kind}={idx} ")?;
        }
        write!(f, "{}", self.description)?;
        if !self.measured.is_nan() {
            write!(
                f,
                " (measured {}, threshold {})",
                self.measured, self.threshold
            )?;
        }
        Ok(())
    }
}

/// Pass/fail outcome of a verifier. Passed exactly when there are no
/// violations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Verdict {
    violations: Vec<Violation>,
}

impl Verdict {
    pub fn pass() -> Self {
        Self::default()
    }

    pub fn from_violations(violations: Vec<Violation>) -> Self {
        Self { violations }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    pub fn push(&mut self, v: Violation) {
        self.violations.push(v);
    }
}

/// Checks every structural invariant of a cluster description. Never
/// aborts; each problem becomes a violation.
pub fn validate_scenario(spec: &ClusterSpec) -> Verdict {
    let mut verdict = Verdict::pass();
    let (n, k, m) = (spec.num_users(), spec.num_servers(), spec.num_resources());
    if n == 0 {
        verdict.push(Violation::new("at least one user is required"));
    }
    if k == 0 {
        verdict.push(Violation::new("at least one server is required"));
    }
    if m == 0 {
        verdict.push(Violation::new("at least one resource type is required"));
    }
    for (r, res) in spec.resources.iter().enumerate() {
        if res.index != r {
            verdict.push(
                Violation::new(format!("resource index {} out of place", res.index))
                    .subject("resource", r),
            );
        }
    }

    for (i, server) in spec.servers.iter().enumerate() {
        if server.capacities.len() != m {
            verdict.push(
                Violation::new(format!(
                    "capacity vector has length {}, expected {m}",
                    server.capacities.len()
                ))
                .subject("server", i),
            );
            continue;
        }
        for (r, &c) in server.capacities.iter().enumerate() {
            if !(c >= 0.0) || !c.is_finite() {
                verdict.push(
                    Violation::new("capacity must be finite and non-negative")
                        .subject("server", i)
                        .subject("resource", r)
                        .values(c, 0.0),
                );
            }
        }
        if !server.capacities.iter().any(|&c| c > 0.0) {
            verdict.push(Violation::new("server has no positive capacity").subject("server", i));
        }
    }

    for (idx, user) in spec.users.iter().enumerate() {
        if !(user.weight > 0.0) || !user.weight.is_finite() {
            verdict.push(
                Violation::new("weight must be positive")
                    .subject("user", idx)
                    .values(user.weight, 0.0),
            );
        }
        if user.demand.len() != m {
            verdict.push(
                Violation::new(format!(
                    "demand vector has length {}, expected {m}",
                    user.demand.len()
                ))
                .subject("user", idx),
            );
        } else {
            for (r, &d) in user.demand.iter().enumerate() {
                if !(d >= 0.0) || !d.is_finite() {
                    verdict.push(
                        Violation::new("demand must be finite and non-negative")
                            .subject("user", idx)
                            .subject("resource", r)
                            .values(d, 0.0),
                    );
                }
            }
            if !user.demand.iter().any(|&d| d > 0.0) {
                verdict
                    .push(Violation::new("demand must have a positive entry").subject("user", idx));
            }
        }
        if user.declared_eligibility.len() != k {
            verdict.push(
                Violation::new(format!(
                    "eligibility vector has length {}, expected {k}",
                    user.declared_eligibility.len()
                ))
                .subject("user", idx),
            );
        }
    }

    if let Some(g) = &spec.gamma_override {
        if g.len() != n || g.iter().any(|row| row.len() != k) {
            verdict.push(Violation::new(format!("gamma_override must be {n}x{k}")));
        } else {
            for (u, row) in g.iter().enumerate() {
                for (i, &v) in row.iter().enumerate() {
                    if !(v >= 0.0) || !v.is_finite() {
                        verdict.push(
                            Violation::new("gamma_override entry must be finite and non-negative")
                                .subject("user", u)
                                .subject("server", i)
                                .values(v, 0.0),
                        );
                    }
                    let declared = spec
                        .users
                        .get(u)
                        .and_then(|usr| usr.declared_eligibility.get(i))
                        .copied()
                        .unwrap_or(true);
                    if v > 0.0 && !declared {
                        verdict.push(
                            Violation::new("gamma_override positive where user is ineligible")
                                .subject("user", u)
                                .subject("server", i)
                                .values(v, 0.0),
                        );
                    }
                }
            }
        }
    }
    verdict
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn ex1_is_valid() {
        assert!(validate_scenario(&fixtures::ex1()).passed());
    }

    #[test]
    fn zero_weight_is_rejected() {
        let mut spec = fixtures::ex1();
        spec.users[0].weight = 0.0;
        let v = validate_scenario(&spec);
        assert!(!v.passed());
        assert!(v.violations()[0]
            .description
            .contains("weight must be positive"));
    }

    #[test]
    fn override_conflicting_with_eligibility_is_rejected() {
        let mut spec = fixtures::ex3();
        spec.gamma_override.as_mut().unwrap()[2][0] = 5.0;
        let v = validate_scenario(&spec);
        assert!(!v.passed());
        assert_eq!(v.violations().len(), 1);
        assert!(v.violations()[0].subjects.contains(&("user", 2)));
    }

    #[test]
    fn structural_errors_are_reported() {
        let mut spec = fixtures::ex1();
        spec.servers[0].capacities[1] = -1.0;
        spec.users[1].demand = vec![0.0, 0.0, 0.0];
        spec.users[2].declared_eligibility.pop();
        let v = validate_scenario(&spec);
        assert_eq!(v.violations().len(), 3);

        let empty = ClusterSpec::from_parts(vec![], vec![]);
        assert!(!validate_scenario(&empty).passed());
    }

    #[test]
    fn validation_is_pure() {
        let mut spec = fixtures::ex1();
        spec.users[0].weight = -2.0;
        assert_eq!(validate_scenario(&spec), validate_scenario(&spec));
    }

    #[test]
    fn totals_and_usage() {
        let alloc = Allocation::from_rows(vec![vec![3.0, 0.0], vec![3.0, 0.0], vec![0.0, 6.0]]);
        assert_eq!(alloc.totals(), vec![3.0, 3.0, 6.0]);
        let spec = fixtures::ex1();
        assert_eq!(alloc.server_usage(&spec, 0), vec![6.0, 12.0, 33.0]);
        assert_eq!(Allocation::zeros(2, 3).totals(), vec![0.0, 0.0]);
    }
}
