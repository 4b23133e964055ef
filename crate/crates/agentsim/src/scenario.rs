//! Scenario files: the sectioned text format runs are configured with,
//! plus validation into the resolved form the engine consumes.
//!
//! A scenario is TOML with five sections — `[hosts]`, `[[agents]]`,
//! `[scripts.*]`, `[network]`, `[algorithms]` — and two top-level keys,
//! `horizon` and `seed`. Agents are referred to by name in the file and
//! resolved to dense numeric ids (file order) during validation; scripts
//! are resolved to indices in name order. See the repository README for
//! the full grammar and the defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::model::{AgentId, AttributeQuery, HostId, SimTime};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("duplicate id: {name}")]
    DuplicateId { name: String },
    #[error("dangling reference: {reference}")]
    DanglingReference { reference: String },
    #[error("parameter {name} out of range: got {value}, expected {expected}")]
    ParameterOutOfRange {
        name: String,
        value: String,
        expected: &'static str,
    },
}

fn out_of_range(
    name: impl Into<String>,
    value: impl ToString,
    expected: &'static str,
) -> ScenarioError {
    ScenarioError::ParameterOutOfRange {
        name: name.into(),
        value: value.to_string(),
        expected,
    }
}

// ---------------------------------------------------------------------
// Raw (file-shaped) form.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    horizon: u64,
    seed: Option<u64>,
    /// Free-form tag for humans; ignored by the simulator.
    #[allow(dead_code)]
    label: Option<String>,
    hosts: RawHosts,
    #[serde(default)]
    agents: Vec<RawAgent>,
    #[serde(default)]
    scripts: BTreeMap<String, RawScript>,
    #[serde(default)]
    network: RawNetwork,
    #[serde(default)]
    algorithms: RawAlgorithms,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHosts {
    count: u32,
    /// Capacity applied to every host unless `capacities` overrides it.
    capacity: Option<u32>,
    capacities: Option<Vec<u32>>,
    /// Host the intermediary runs on. Defaults to host 0.
    intermediary: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    name: String,
    host: u32,
    #[serde(default)]
    attributes: BTreeMap<String, String>,
    script: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScript {
    repeat: Option<String>,
    steps: Vec<RawStep>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    offset: u64,
    to: Option<String>,
    broker: Option<BTreeMap<String, String>>,
    matchmaker: Option<BTreeMap<String, String>>,
    size: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    intra_host_latency: Option<u64>,
    inter_host_latency: Option<u64>,
    loss_probability: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAlgorithms {
    localization: Option<bool>,
    load_distribution: Option<bool>,
    d: Option<f64>,
    delta: Option<f64>,
    beta: Option<f64>,
    window: Option<u64>,
    repetitions: Option<u32>,
    grouping_repetitions: Option<u32>,
    backoff_windows: Option<u32>,
    max_forwards: Option<u32>,
}

// ---------------------------------------------------------------------
// Validated form.

/// A fully resolved, range-checked scenario. The engine only ever sees
/// this type; constructing one goes through [`validate_scenario`].
#[derive(Debug, Clone)]
pub struct ValidatedScenario {
    pub horizon: SimTime,
    pub seed: u64,
    pub hosts: Vec<HostSpec>,
    pub intermediary_host: HostId,
    pub agents: Vec<AgentSpec>,
    pub scripts: Vec<BehaviorScript>,
    pub network: NetworkModel,
    pub algorithms: AlgorithmConfig,
}

#[derive(Debug, Clone)]
pub struct HostSpec {
    pub id: HostId,
    pub capacity: u32,
}

#[derive(Debug, Clone)]
pub struct AgentSpec {
    pub id: AgentId,
    pub name: String,
    pub host: HostId,
    pub attributes: BTreeMap<String, String>,
    /// Index into [`ValidatedScenario::scripts`].
    pub script: Option<usize>,
}

/// A deterministic send plan. Step offsets are relative to the start of
/// the current cycle; a looping script starts its next cycle one tick
/// after the last step of the previous one.
#[derive(Debug, Clone)]
pub struct BehaviorScript {
    pub name: String,
    pub repeat: Repeat,
    pub steps: Vec<ScriptStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Repeat {
    Loop,
    Once,
}

#[derive(Debug, Clone)]
pub struct ScriptStep {
    pub offset: u64,
    pub action: SendAction,
    pub payload: u64,
}

#[derive(Debug, Clone)]
pub enum SendAction {
    /// Send straight to a known agent.
    Direct(AgentId),
    /// Attribute-addressed send; the intermediary forwards the payload.
    Broker(AttributeQuery),
    /// Attribute-addressed send; the intermediary returns the address
    /// and the payload then travels directly.
    Matchmaker(AttributeQuery),
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub intra_host_latency: u64,
    pub inter_host_latency: u64,
    pub loss_probability: f64,
}

#[derive(Debug, Clone)]
pub struct AlgorithmConfig {
    pub localization_enabled: bool,
    pub load_distribution_enabled: bool,
    /// Smoothing weight for host-level dependency updates.
    pub d: f64,
    /// Smoothing weight for group-level dependency updates.
    pub delta: f64,
    /// Migration threshold on the remote-over-local coefficient.
    pub beta: f64,
    /// Observation window length in ticks.
    pub window: u64,
    /// Windows between successive localization decision rounds.
    pub repetitions: u32,
    /// Monitor-and-group passes per load-distribution activation.
    pub grouping_repetitions: u32,
    /// Windows to wait before retrying after every target rejected.
    pub backoff_windows: u32,
    /// Forwarding steps a single message may take before it is dropped.
    pub max_forwards: u32,
}

impl ValidatedScenario {
    pub fn host_ids(&self) -> Vec<HostId> {
        self.hosts.iter().map(|h| h.id).collect()
    }

    pub fn agent_by_name(&self, name: &str) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| a.name == name)
    }
}

/// Read, parse and validate a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ValidatedScenario, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}

/// Parse and validate scenario text.
pub fn parse_scenario(text: &str) -> Result<ValidatedScenario, ScenarioError> {
    let raw: RawScenario = toml::from_str(text)?;
    validate_scenario(raw)
}

fn validate_scenario(raw: RawScenario) -> Result<ValidatedScenario, ScenarioError> {
    if raw.hosts.count == 0 {
        return Err(out_of_range("hosts.count", raw.hosts.count, ">= 1"));
    }

    let capacities = match (&raw.hosts.capacity, &raw.hosts.capacities) {
        (_, Some(list)) => {
            if list.len() != raw.hosts.count as usize {
                return Err(out_of_range(
                    "hosts.capacities",
                    format!("{} entries", list.len()),
                    "one entry per host",
                ));
            }
            list.clone()
        }
        (Some(cap), None) => vec![*cap; raw.hosts.count as usize],
        (None, None) => {
            return Err(out_of_range(
                "hosts.capacity",
                "missing",
                "a capacity or per-host capacities",
            ))
        }
    };
    for (i, cap) in capacities.iter().enumerate() {
        if *cap == 0 {
            return Err(out_of_range(format!("hosts.capacities[{i}]"), cap, ">= 1"));
        }
    }

    let intermediary = raw.hosts.intermediary.unwrap_or(0);
    if intermediary >= raw.hosts.count {
        return Err(ScenarioError::DanglingReference {
            reference: format!("hosts.intermediary names host {intermediary}, which does not exist"),
        });
    }

    // Scripts first (agents refer to them by name). Indices follow name
    // order so they are independent of file layout.
    let script_names: Vec<&String> = raw.scripts.keys().collect();
    let script_index: BTreeMap<&str, usize> = script_names
        .iter()
        .enumerate()
        .map(|(i, name)| (name.as_str(), i))
        .collect();

    // Agent names resolve to dense ids in file order.
    let mut seen = BTreeSet::new();
    let mut name_to_id = BTreeMap::new();
    for (i, agent) in raw.agents.iter().enumerate() {
        if !seen.insert(agent.name.as_str()) {
            return Err(ScenarioError::DuplicateId {
                name: agent.name.clone(),
            });
        }
        name_to_id.insert(agent.name.as_str(), AgentId(i as u32));
    }

    let mut agents = Vec::with_capacity(raw.agents.len());
    for (i, agent) in raw.agents.iter().enumerate() {
        if agent.host >= raw.hosts.count {
            return Err(ScenarioError::DanglingReference {
                reference: format!(
                    "agent {} starts on host {}, which does not exist",
                    agent.name, agent.host
                ),
            });
        }
        let script = match &agent.script {
            None => None,
            Some(name) => match script_index.get(name.as_str()) {
                Some(&idx) => Some(idx),
                None => {
                    return Err(ScenarioError::DanglingReference {
                        reference: format!(
                            "agent {} references script {name}, which is not defined",
                            agent.name
                        ),
                    })
                }
            },
        };
        agents.push(AgentSpec {
            id: AgentId(i as u32),
            name: agent.name.clone(),
            host: HostId(agent.host),
            attributes: agent.attributes.clone(),
            script,
        });
    }

    let mut scripts = Vec::with_capacity(raw.scripts.len());
    for (name, script) in &raw.scripts {
        scripts.push(validate_script(name, script, &name_to_id)?);
    }

    let network = NetworkModel {
        intra_host_latency: raw.network.intra_host_latency.unwrap_or(0),
        inter_host_latency: raw.network.inter_host_latency.unwrap_or(5),
        loss_probability: raw.network.loss_probability.unwrap_or(0.0),
    };
    if network.inter_host_latency == 0 {
        return Err(out_of_range(
            "network.inter_host_latency",
            0,
            ">= 1 (a zero-latency network collapses event ordering)",
        ));
    }
    if !(0.0..=1.0).contains(&network.loss_probability) {
        return Err(out_of_range(
            "network.loss_probability",
            network.loss_probability,
            "within [0, 1]",
        ));
    }

    let a = &raw.algorithms;
    let algorithms = AlgorithmConfig {
        localization_enabled: a.localization.unwrap_or(true),
        load_distribution_enabled: a.load_distribution.unwrap_or(true),
        d: a.d.unwrap_or(0.5),
        delta: a.delta.unwrap_or(0.5),
        beta: a.beta.unwrap_or(1.5),
        window: a.window.unwrap_or(100),
        repetitions: a.repetitions.unwrap_or(3),
        grouping_repetitions: a.grouping_repetitions.unwrap_or(3),
        backoff_windows: a.backoff_windows.unwrap_or(2),
        max_forwards: a.max_forwards.unwrap_or(4),
    };
    if !(0.0..=1.0).contains(&algorithms.d) || !algorithms.d.is_finite() {
        return Err(out_of_range("algorithms.d", algorithms.d, "within [0, 1]"));
    }
    if !(0.0..=1.0).contains(&algorithms.delta) || !algorithms.delta.is_finite() {
        return Err(out_of_range(
            "algorithms.delta",
            algorithms.delta,
            "within [0, 1]",
        ));
    }
    if !(algorithms.beta > 0.0) || !algorithms.beta.is_finite() {
        return Err(out_of_range("algorithms.beta", algorithms.beta, "> 0"));
    }
    if algorithms.window == 0 {
        return Err(out_of_range("algorithms.window", 0, ">= 1"));
    }
    if algorithms.repetitions == 0 {
        return Err(out_of_range("algorithms.repetitions", 0, ">= 1"));
    }
    if algorithms.grouping_repetitions == 0 {
        return Err(out_of_range("algorithms.grouping_repetitions", 0, ">= 1"));
    }
    if algorithms.backoff_windows == 0 {
        return Err(out_of_range("algorithms.backoff_windows", 0, ">= 1"));
    }

    Ok(ValidatedScenario {
        horizon: raw.horizon,
        seed: raw.seed.unwrap_or(0),
        hosts: capacities
            .into_iter()
            .enumerate()
            .map(|(i, capacity)| HostSpec {
                id: HostId(i as u32),
                capacity,
            })
            .collect(),
        intermediary_host: HostId(intermediary),
        agents,
        scripts,
        network,
        algorithms,
    })
}

fn validate_script(
    name: &str,
    raw: &RawScript,
    name_to_id: &BTreeMap<&str, AgentId>,
) -> Result<BehaviorScript, ScenarioError> {
    let repeat = match raw.repeat.as_deref() {
        None | Some("loop") => Repeat::Loop,
        Some("once") => Repeat::Once,
        Some(other) => {
            return Err(out_of_range(
                format!("scripts.{name}.repeat"),
                other,
                "\"loop\" or \"once\"",
            ))
        }
    };
    if raw.steps.is_empty() {
        return Err(out_of_range(
            format!("scripts.{name}.steps"),
            "empty",
            "at least one step",
        ));
    }
    let mut steps = Vec::with_capacity(raw.steps.len());
    let mut last_offset = 0u64;
    for (i, step) in raw.steps.iter().enumerate() {
        if i > 0 && step.offset < last_offset {
            return Err(out_of_range(
                format!("scripts.{name}.steps[{i}].offset"),
                step.offset,
                "non-decreasing offsets",
            ));
        }
        last_offset = step.offset;
        let action = match (&step.to, &step.broker, &step.matchmaker) {
            (Some(target), None, None) => match name_to_id.get(target.as_str()) {
                Some(&id) => SendAction::Direct(id),
                None => {
                    return Err(ScenarioError::DanglingReference {
                        reference: format!(
                            "script {name} step {i} sends to {target}, which is not an agent"
                        ),
                    })
                }
            },
            (None, Some(query), None) => SendAction::Broker(AttributeQuery {
                required: query.clone(),
            }),
            (None, None, Some(query)) => SendAction::Matchmaker(AttributeQuery {
                required: query.clone(),
            }),
            _ => {
                return Err(out_of_range(
                    format!("scripts.{name}.steps[{i}]"),
                    "ambiguous action",
                    "exactly one of to / broker / matchmaker",
                ))
            }
        };
        steps.push(ScriptStep {
            offset: step.offset,
            action,
            payload: step.size.unwrap_or(1),
        });
    }
    Ok(BehaviorScript {
        name: name.to_string(),
        repeat,
        steps,
    })
}
