//! JSON scenario files and simulator configuration files.
//!
//! A scenario names its resources, servers and users by string id. Server
//! entries may carry a `count`, which expands them into identical servers
//! with ids `<id>-1`, `<id>-2`, ...; a user's `eligible` list may name
//! either expanded ids or the entry id, which stands for the whole class.
//! `"auto"` eligibility admits every server the user can physically run
//! on.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_scenario, ClusterSpec, ResourceId, ServerSpec, UserSpec};
use crate::sim::{Event, EventKind, Offsets, SimConfig, SimMechanism};

/// Largest number of servers a scenario may expand to.
pub const MAX_SERVERS: usize = 10_000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{field}: {message}")]
    Field { field: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ScenarioError {
    fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError::Field {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<serde_json::Error> for ScenarioError {
    fn from(e: serde_json::Error) -> Self {
        let full = e.to_string();
        // serde_json appends " at line L column C"; keep the message bare.
        let message = full
            .rsplit_once(" at line ")
            .map_or(full.clone(), |(m, _)| m.to_string());
        ScenarioError::Syntax {
            line: e.line(),
            column: e.column(),
            message,
        }
    }
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Ids may be written as strings or as integers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawId {
    Text(String),
    Number(u64),
}

impl fmt::Display for RawId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RawId::Text(s) => f.write_str(s),
            RawId::Number(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawServer {
    id: RawId,
    capacity: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    count: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RawEligible {
    Keyword(String),
    Servers(Vec<RawId>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUser {
    id: RawId,
    weight: f64,
    demand: Vec<f64>,
    eligible: RawEligible,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawAction {
    Activate,
    Deactivate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    time: f64,
    action: RawAction,
    user: RawId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    resources: Vec<String>,
    servers: Vec<RawServer>,
    users: Vec<RawUser>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma_override: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    events: Vec<RawEvent>,
}

/// A cluster with the names it was written with, plus its event list.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ClusterSpec,
    pub server_ids: Vec<String>,
    pub user_ids: Vec<String>,
    pub events: Vec<Event>,
}

impl Scenario {
    /// Wraps a spec, naming servers `s1..` and users `u1..`.
    pub fn from_spec(spec: ClusterSpec) -> Self {
        Self {
            server_ids: (1..=spec.num_servers()).map(|i| format!("s{i}")).collect(),
            user_ids: (1..=spec.num_users()).map(|n| format!("u{n}")).collect(),
            spec,
            events: Vec::new(),
        }
    }

    pub fn with_events(mut self, events: Vec<Event>) -> Self {
        self.events = events;
        self
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario = serde_json::from_str(text)?;
        build(raw)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::from_json(&read(path.as_ref())?)
    }

    /// Pretty JSON with every server listed individually. Parsing the
    /// output yields an identical scenario.
    pub fn to_json(&self) -> String {
        let raw = RawScenario {
            resources: self.spec.resources.iter().map(|r| r.name.clone()).collect(),
            servers: self
                .spec
                .servers
                .iter()
                .zip(&self.server_ids)
                .map(|(s, id)| RawServer {
                    id: RawId::Text(id.clone()),
                    capacity: s.capacities.clone(),
                    count: None,
                })
                .collect(),
            users: self
                .spec
                .users
                .iter()
                .zip(&self.user_ids)
                .map(|(u, id)| RawUser {
                    id: RawId::Text(id.clone()),
                    weight: u.weight,
                    demand: u.demand.clone(),
                    eligible: RawEligible::Servers(
                        u.declared_eligibility
                            .iter()
                            .zip(&self.server_ids)
                            .filter(|(&e, _)| e)
                            .map(|(_, s)| RawId::Text(s.clone()))
                            .collect(),
                    ),
                })
                .collect(),
            gamma_override: self.spec.gamma_override.clone(),
            events: self
                .events
                .iter()
                .map(|e| RawEvent {
                    time: e.time,
                    action: match e.kind {
                        EventKind::Activate => RawAction::Activate,
                        EventKind::Deactivate => RawAction::Deactivate,
                    },
                    user: RawId::Text(self.user_ids[e.user].clone()),
                })
                .collect(),
        };
        let mut out = serde_json::to_string_pretty(&raw).expect("scenario serializes");
        out.push('\n');
        out
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_ids.iter().position(|u| u == id)
    }

    pub fn server_index(&self, id: &str) -> Option<usize> {
        self.server_ids.iter().position(|s| s == id)
    }
}

fn unique<'a>(
    ids: impl Iterator<Item = &'a String>,
    what: &str,
) -> Result<HashMap<String, usize>, ScenarioError> {
    let mut map = HashMap::new();
    for (idx, id) in ids.enumerate() {
        if map.insert(id.clone(), idx).is_some() {
            return Err(ScenarioError::field(
                format!("{what}[{idx}].id"),
                format!("duplicate id `{id}`"),
            ));
        }
    }
    Ok(map)
}

fn build(raw: RawScenario) -> Result<Scenario, ScenarioError> {
    let m = raw.resources.len();
    // Expand classes; remember which expanded servers each entry produced.
    let mut server_ids = Vec::new();
    let mut capacities = Vec::new();
    let mut classes: HashMap<String, Vec<usize>> = HashMap::new();
    for (e, s) in raw.servers.iter().enumerate() {
        if s.capacity.len() != m {
            return Err(ScenarioError::field(
                format!("servers[{e}].capacity"),
                format!("has {} entries, expected {m}", s.capacity.len()),
            ));
        }
        let count = s.count.unwrap_or(1);
        if count == 0 {
            return Err(ScenarioError::field(
                format!("servers[{e}].count"),
                "must be at least 1",
            ));
        }
        if server_ids.len() + count > MAX_SERVERS {
            return Err(ScenarioError::field(
                format!("servers[{e}].count"),
                format!("expansion exceeds {MAX_SERVERS} servers"),
            ));
        }
        let base = s.id.to_string();
        let members = classes.entry(base.clone()).or_default();
        if !members.is_empty() {
            return Err(ScenarioError::field(
                format!("servers[{e}].id"),
                format!("duplicate id `{base}`"),
            ));
        }
        for k in 1..=count {
            members.push(server_ids.len());
            server_ids.push(if s.count.is_some() {
                format!("{base}-{k}")
            } else {
                base.clone()
            });
            capacities.push(s.capacity.clone());
        }
    }
    let server_index = unique(server_ids.iter(), "servers")?;
    let k = server_ids.len();
    let entries = raw.servers.len();

    let user_ids: Vec<String> = raw.users.iter().map(|u| u.id.to_string()).collect();
    let user_index = unique(user_ids.iter(), "users")?;

    let mut users = Vec::with_capacity(raw.users.len());
    for (n, u) in raw.users.iter().enumerate() {
        if u.demand.len() != m {
            return Err(ScenarioError::field(
                format!("users[{n}].demand"),
                format!("has {} entries, expected {m}", u.demand.len()),
            ));
        }
        let eligibility = match &u.eligible {
            RawEligible::Keyword(k) if k == "auto" => vec![true; server_ids.len()],
            RawEligible::Keyword(other) => {
                return Err(ScenarioError::field(
                    format!("users[{n}].eligible"),
                    format!("expected a list of server ids or \"auto\", got \"{other}\""),
                ))
            }
            RawEligible::Servers(list) => {
                let mut e = vec![false; k];
                for (j, id) in list.iter().enumerate() {
                    let id = id.to_string();
                    if let Some(&i) = server_index.get(&id) {
                        e[i] = true;
                    } else if let Some(members) = classes.get(&id) {
                        members.iter().for_each(|&i| e[i] = true);
                    } else {
                        return Err(ScenarioError::field(
                            format!("users[{n}].eligible[{j}]"),
                            format!("unknown server `{id}`"),
                        ));
                    }
                }
                e
            }
        };
        users.push(UserSpec::new(n, u.demand.clone(), u.weight, eligibility));
    }

    let gamma_override = match raw.gamma_override {
        None => None,
        Some(rows) => {
            if rows.len() != users.len() {
                return Err(ScenarioError::field(
                    "gamma_override",
                    format!(
                        "has {} rows, expected one per user ({})",
                        rows.len(),
                        users.len()
                    ),
                ));
            }
            let mut out = Vec::with_capacity(rows.len());
            for (n, row) in rows.into_iter().enumerate() {
                if row.len() == k {
                    out.push(row);
                } else if row.len() == entries {
                    // One column per server entry: repeat it across the class.
                    let mut full = Vec::with_capacity(k);
                    for (s, v) in raw.servers.iter().zip(&row) {
                        full.extend(std::iter::repeat(*v).take(s.count.unwrap_or(1)));
                    }
                    out.push(full);
                } else {
                    return Err(ScenarioError::field(
                        format!("gamma_override[{n}]"),
                        format!(
                            "has {} columns, expected {k} (servers) or {entries} (server entries)",
                            row.len()
                        ),
                    ));
                }
            }
            Some(out)
        }
    };

    let mut events = Vec::with_capacity(raw.events.len());
    for (j, e) in raw.events.iter().enumerate() {
        let id = e.user.to_string();
        let Some(&user) = user_index.get(&id) else {
            return Err(ScenarioError::field(
                format!("events[{j}].user"),
                format!("unknown user `{id}`"),
            ));
        };
        if !(e.time.is_finite() && e.time >= 0.0) {
            return Err(ScenarioError::field(
                format!("events[{j}].time"),
                "must be a non-negative number",
            ));
        }
        let kind = match e.action {
            RawAction::Activate => EventKind::Activate,
            RawAction::Deactivate => EventKind::Deactivate,
        };
        events.push(Event {
            time: e.time,
            kind,
            user,
        });
    }

    let spec = ClusterSpec {
        resources: raw
            .resources
            .into_iter()
            .enumerate()
            .map(|(r, s)| ResourceId::new(r, s))
            .collect(),
        servers: capacities
            .into_iter()
            .enumerate()
            .map(|(i, c)| ServerSpec::new(i, c))
            .collect(),
        users,
        gamma_override,
    };
    let verdict = validate_scenario(&spec);
    if !verdict.passed() {
        let scenario = Scenario {
            spec,
            server_ids,
            user_ids,
            events,
        };
        let msg: Vec<String> = verdict
            .violations()
            .iter()
            .map(|v| scenario.describe(v))
            .collect();
        return Err(ScenarioError::Invalid(msg.join("; ")));
    }
    Ok(Scenario {
        spec,
        server_ids,
        user_ids,
        events,
    })
}

impl Scenario {
    /// A violation with its subjects spelled by id.
    pub fn describe(&self, v: &crate::model::Violation) -> String {
        let mut parts = Vec::new();
        for &(kind, idx) in &v.subjects {
            let name = match kind {
                "user" => self.user_ids.get(idx).cloned(),
                "server" => self.server_ids.get(idx).cloned(),
                "resource" => self.spec.resources.get(idx).map(|r| r.name.clone()),
                _ => None,
            };
            parts.push(format!(
                "{kind} {}",
                name.unwrap_or_else(|| idx.to_string())
            ));
        }
        if parts.is_empty() {
            v.description.clone()
        } else {
            format!("{}: {}", parts.join(", "), v.description)
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RawOffsets {
    Keyword(String),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimConfig {
    horizon: f64,
    #[serde(default = "one")]
    update_period: f64,
    #[serde(default)]
    offsets: Option<RawOffsets>,
    #[serde(default)]
    mechanism: Option<String>,
    #[serde(default = "one")]
    recompute_period: f64,
    #[serde(default)]
    seed: u64,
}

fn one() -> f64 {
    1.0
}

/// Reads a simulator configuration. Only `horizon` is required; periods
/// default to 1, offsets to `"staggered"` and the mechanism to
/// `"psdsf-distributed"`.
pub fn sim_config_from_json(text: &str) -> Result<SimConfig, ScenarioError> {
    let raw: RawSimConfig = serde_json::from_str(text)?;
    let offsets = match raw.offsets {
        None => Offsets::Staggered,
        Some(RawOffsets::Keyword(k)) if k == "staggered" => Offsets::Staggered,
        Some(RawOffsets::Keyword(k)) if k == "random" => Offsets::Random,
        Some(RawOffsets::Keyword(k)) => {
            return Err(ScenarioError::field(
                "offsets",
                format!("expected \"staggered\", \"random\" or a list, got \"{k}\""),
            ))
        }
        Some(RawOffsets::Values(v)) => Offsets::Explicit(v),
    };
    let mechanism = match raw.mechanism {
        None => SimMechanism::Distributed,
        Some(name) => name
            .parse()
            .map_err(|e: String| ScenarioError::field("mechanism", e))?,
    };
    Ok(SimConfig {
        horizon: raw.horizon,
        update_period: raw.update_period,
        offsets,
        mechanism,
        recompute_period: raw.recompute_period,
        seed: raw.seed,
    })
}

pub fn sim_config_from_path(path: impl AsRef<Path>) -> Result<SimConfig, ScenarioError> {
    sim_config_from_json(&read(path.as_ref())?)
}
