//! Declarative scenario files: protocol documents to load, an agent roster
//! with scripted decision rules, delivery policy, and assertions over the
//! final stores and trace.

use super::network::DeliveryPolicy;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Protocol documents, relative to the scenario file.
    pub specs: Vec<String>,
    #[serde(default)]
    pub delivery: DeliveryPolicy,
    #[serde(default = "default_step_limit")]
    pub step_limit: u64,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub assertions: Vec<Assertion>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_step_limit() -> u64 {
    10_000
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub address: String,
    pub plays: Vec<(String, String)>,
    /// Protocol documents this agent alone loads (defaults to the scenario's
    /// shared set); lets an agent know only its constituent protocol.
    #[serde(default)]
    pub specs: Option<Vec<String>>,
    /// Preconfigured contacts: an inline label->addresses object, or a path
    /// to a JSON file of that shape.
    #[serde(default)]
    pub contacts: Option<serde_json::Value>,
    /// Whether the agent keeps a cross-enactment contact registry.
    #[serde(default = "default_true")]
    pub mas_adapter: bool,
    #[serde(default)]
    pub seeds: Vec<SeedBinding>,
    #[serde(default)]
    pub rules: Vec<Rule>,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedBinding {
    pub protocol: String,
    #[serde(default)]
    pub context: BTreeMap<String, String>,
    pub bindings: BTreeMap<String, serde_json::Value>,
}

/// One scripted decision-table entry. Emission rules fire once per key
/// context (or up to `limit` times for context-free initiations); reception
/// rules run on every integration of their schema.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    #[serde(default)]
    pub emit: Option<String>,
    #[serde(default)]
    pub on_receive: Option<String>,
    #[serde(default)]
    pub when: Vec<Condition>,
    #[serde(default)]
    pub values: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub recipients: BTreeMap<String, String>,
    #[serde(default)]
    pub limit: Option<u32>,
    #[serde(default)]
    pub record_contacts: Option<RecordContacts>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Some binding of the parameter exists in the protocol's view.
    ParamBound { protocol: String, param: String },
    ParamUnbound { protocol: String, param: String },
    /// A role binding's address is on the allowlist.
    RoleIn {
        protocol: String,
        param: String,
        allowlist: Vec<String>,
    },
    RoleNotIn {
        protocol: String,
        param: String,
        allowlist: Vec<String>,
    },
    /// The agent's registry has no candidate for the capability.
    RegistryLacks { capability: String },
    /// The agent's registry has at least `min` candidates.
    RegistryHas {
        capability: String,
        #[serde(default = "default_min")]
        min: usize,
    },
}

fn default_min() -> usize {
    1
}

/// Record introduced contacts into the registry: addresses from one payload
/// parameter, capability labels from another.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordContacts {
    pub from_param: String,
    #[serde(default)]
    pub capability_param: Option<String>,
    #[serde(default)]
    pub capability: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assertion {
    /// is_complete for the agent's view of the protocol, in some context.
    Complete {
        agent: String,
        protocol: String,
        #[serde(default = "default_true")]
        expect: bool,
    },
    ParamBound {
        agent: String,
        protocol: String,
        param: String,
        #[serde(default = "default_true")]
        expect: bool,
    },
    /// The first SENT of `earlier` precedes the first SENT of `later`.
    TraceOrder { earlier: String, later: String },
    /// Number of SENT events for a schema.
    Sent {
        schema: String,
        #[serde(default)]
        min: Option<u64>,
        #[serde(default)]
        max: Option<u64>,
    },
    RegistryHas {
        agent: String,
        capability: String,
        address: String,
    },
    RegistryCount {
        agent: String,
        capability: String,
        expect: usize,
    },
    /// The run ended in quiescence (not at the step limit).
    Quiescent,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut scenario: Scenario = serde_json::from_str(&text)
            .map_err(|e| ScenarioError::Invalid(format!("{}: {e}", path.display())))?;
        scenario.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        if scenario.agents.is_empty() {
            return Err(ScenarioError::Invalid("no agents in roster".into()));
        }
        Ok(scenario)
    }

    pub fn resolve_path(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}
