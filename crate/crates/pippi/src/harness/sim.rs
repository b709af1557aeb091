//! The simulator: a roster of adapters driven by scripted decision rules
//! over a deterministic network. Identical (scenario, seed) pairs yield
//! byte-identical traces.

use super::network::SimNetwork;
use super::scenario::{AgentSpec, Assertion, Condition, Rule, Scenario, ScenarioError};
use super::trace::{format_key_tuple, TraceEvent, TraceKind};
use crate::codec::Value;
use crate::enactment::{Adapter, AdapterConfig, EnabledMessage, KeyTuple, Reception};
use crate::model::{resolve, Loaded};
use crate::registry::Registry;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub enum RunStatus {
    Quiescent,
    StepLimitExceeded,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssertionResult {
    pub description: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Serialize)]
pub struct Report {
    pub name: String,
    pub seed: u64,
    pub steps: u64,
    pub status: RunStatus,
    pub trace: Vec<String>,
    pub assertions: Vec<AssertionResult>,
    #[serde(skip)]
    pub agents: BTreeMap<String, Agent>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

pub struct Agent {
    pub adapter: Adapter,
    spec: AgentSpec,
    rule_fired: Vec<u32>,
    rule_contexts: Vec<BTreeSet<KeyTuple>>,
    rule_targets: Vec<BTreeSet<String>>,
    seq_counters: BTreeMap<String, u64>,
}

impl Agent {
    fn registry(&self) -> Option<&Registry> {
        self.adapter.registry.as_ref()
    }
}

pub struct Simulation {
    pub scenario: Scenario,
    pub specs: Arc<Loaded>,
    pub network: SimNetwork,
    pub agents: BTreeMap<String, Agent>,
    roster: Vec<String>,
    pub trace: Vec<TraceEvent>,
    seq: u64,
    seed: u64,
}

impl Simulation {
    pub fn new(scenario: Scenario, seed: u64) -> Result<Simulation, ScenarioError> {
        let load_set = |files: &[String]| -> Result<Loaded, ScenarioError> {
            let mut docs = Vec::new();
            for rel in files {
                let path = scenario.resolve_path(rel);
                let text = std::fs::read_to_string(&path).map_err(|e| ScenarioError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
                let spec = crate::lang::parse(&text)
                    .map_err(|e| ScenarioError::Invalid(format!("{}: {e}", path.display())))?;
                docs.push((rel.clone(), spec));
            }
            let loaded = resolve(&docs);
            if loaded.has_errors() {
                let msgs: Vec<String> = loaded
                    .diagnostics
                    .iter()
                    .filter(|d| d.is_error())
                    .map(|d| d.to_string())
                    .collect();
                return Err(ScenarioError::Invalid(format!(
                    "protocol errors:\n{}",
                    msgs.join("\n")
                )));
            }
            Ok(loaded)
        };
        let specs = Arc::new(load_set(&scenario.specs)?);

        let mut agents = BTreeMap::new();
        let mut roster = Vec::new();
        for (i, spec) in scenario.agents.iter().enumerate() {
            let registry = if spec.mas_adapter {
                let mut reg = match &spec.contacts {
                    Some(serde_json::Value::String(path)) => {
                        let p = scenario.resolve_path(path);
                        let text = std::fs::read_to_string(&p).map_err(|e| ScenarioError::Io {
                            path: p.display().to_string(),
                            source: e,
                        })?;
                        Registry::from_contacts_json(&text)
                            .map_err(|e| ScenarioError::Invalid(e.to_string()))?
                    }
                    Some(obj) => Registry::from_contacts_json(&obj.to_string())
                        .map_err(|e| ScenarioError::Invalid(e.to_string()))?,
                    None => Registry::new(),
                };
                reg.observe_address(&spec.address);
                Some(reg)
            } else {
                None
            };
            let config = AdapterConfig {
                address: spec.address.clone(),
                plays: spec.plays.clone(),
                handlers: BTreeMap::new(),
                seed: seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1)),
            };
            // An agent may load only its own protocol documents.
            let agent_specs = match &spec.specs {
                Some(own) => Arc::new(load_set(own)?),
                None => Arc::clone(&specs),
            };
            let mut adapter = Adapter::new(config, agent_specs, registry);
            for seed_binding in &spec.seeds {
                let ctx = KeyTuple::new(
                    seed_binding
                        .context
                        .iter()
                        .map(|(k, v)| (k.clone(), Value::Id(v.clone())))
                        .collect(),
                );
                for (param, value) in &seed_binding.bindings {
                    adapter.seed_binding(
                        &seed_binding.protocol,
                        param,
                        &ctx,
                        json_to_value(value),
                    );
                }
            }
            let n = spec.rules.len();
            agents.insert(
                spec.address.clone(),
                Agent {
                    adapter,
                    spec: spec.clone(),
                    rule_fired: vec![0; n],
                    rule_contexts: vec![BTreeSet::new(); n],
                    rule_targets: vec![BTreeSet::new(); n],
                    seq_counters: BTreeMap::new(),
                },
            );
            roster.push(spec.address.clone());
        }

        Ok(Simulation {
            network: SimNetwork::new(scenario.delivery, seed),
            scenario,
            specs,
            agents,
            roster,
            trace: Vec::new(),
            seq: 0,
            seed,
        })
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    /// One simulation step: deliver at most one due message, then give every
    /// agent one decision tick in roster order. Returns true when anything
    /// happened.
    pub fn step(&mut self) -> bool {
        let mut active = false;
        if let Some(envelope) = self.network.deliver() {
            active = true;
            let recipient = envelope.wire.recipient_address.clone();
            let seq = self.next_seq();
            if let Some(agent) = self.agents.get_mut(&recipient) {
                let keys = format_key_tuple(&self.specs, &envelope.wire);
                match agent.adapter.receive(&envelope.wire) {
                    Ok(Reception::Integrated { protocol, .. }) => {
                        self.trace.push(TraceEvent {
                            seq,
                            agent: recipient.clone(),
                            kind: TraceKind::Recv,
                            subject: envelope.wire.schema_id.clone(),
                            keys,
                            summary: format!("{} {}", envelope.origin_seq, envelope.wire.encode()),
                        });
                        if agent.adapter.registry.is_some() {
                            if let Some(reg) = agent.adapter.registry.as_mut() {
                                reg.observe_address(&envelope.wire.sender_address);
                            }
                        }
                        let proto = protocol;
                        self.run_reception_rules(&recipient, &proto, &envelope.wire);
                    }
                    Ok(Reception::Duplicate) => {
                        self.trace.push(TraceEvent {
                            seq,
                            agent: recipient.clone(),
                            kind: TraceKind::Recv,
                            subject: envelope.wire.schema_id.clone(),
                            keys,
                            summary: format!(
                                "{} {} (duplicate)",
                                envelope.origin_seq,
                                envelope.wire.encode()
                            ),
                        });
                    }
                    Err(e) => {
                        self.trace.push(TraceEvent {
                            seq,
                            agent: recipient.clone(),
                            kind: TraceKind::Quar,
                            subject: envelope.wire.schema_id.clone(),
                            keys,
                            summary: format!(
                                "{} {} ({e})",
                                envelope.origin_seq,
                                envelope.wire.encode()
                            ),
                        });
                    }
                }
                self.emit_completion_events(&recipient);
            }
        }
        for address in self.roster.clone() {
            if self.tick(&address) {
                active = true;
            }
        }
        self.network.advance();
        active
    }

    /// One decision tick: the first satisfied rule emits one message.
    fn tick(&mut self, address: &str) -> bool {
        let (rules, enabled) = match self.agents.get(address) {
            Some(a) => (a.spec.rules.clone(), a.adapter.enabled_all()),
            None => return false,
        };
        for (rule_idx, rule) in rules.iter().enumerate() {
            let Some(schema_id) = rule.emit.clone() else {
                continue;
            };
            for candidate in enabled.iter().filter(|e| e.schema_id == schema_id) {
                let agent = self.agents.get(address).expect("agent exists");
                let limit = rule.limit.unwrap_or(1);
                if candidate.context.is_empty() {
                    if agent.rule_fired[rule_idx] >= limit {
                        continue;
                    }
                } else if agent.rule_contexts[rule_idx].contains(&candidate.context) {
                    continue;
                }
                if !self.conditions_hold(address, &rule.when) {
                    continue;
                }
                if self.fire(address, rule_idx, rule, candidate.clone()) {
                    return true;
                }
            }
        }
        false
    }

    fn fire(
        &mut self,
        address: &str,
        rule_idx: usize,
        rule: &Rule,
        candidate: EnabledMessage,
    ) -> bool {
        // Resolve out values and recipient choices.
        let mut out_values: BTreeMap<String, Value> = BTreeMap::new();
        {
            let agent = self.agents.get_mut(address).expect("agent exists");
            for (param, raw) in &rule.values {
                let value = resolve_value(agent, raw, &candidate.protocol, &candidate.context);
                out_values.insert(param.clone(), value);
            }
        }
        let mut recipients: BTreeMap<String, String> = BTreeMap::new();
        {
            for (role, selector) in &rule.recipients {
                let agent = self.agents.get_mut(address).expect("agent exists");
                let addr = match resolve_recipient(agent, rule_idx, selector) {
                    Some(a) => a,
                    None => return false,
                };
                recipients.insert(role.clone(), addr);
            }
        }
        let agent = self.agents.get_mut(address).expect("agent exists");
        let result = agent.adapter.emit(
            &candidate.protocol,
            &candidate.schema_id,
            &candidate.context,
            &out_values,
            &recipients,
        );
        match result {
            Ok(wires) => {
                agent.rule_fired[rule_idx] += 1;
                if !candidate.context.is_empty() {
                    agent.rule_contexts[rule_idx].insert(candidate.context.clone());
                }
                for wire in wires {
                    let seq = self.next_seq();
                    let keys = format_key_tuple(&self.specs, &wire);
                    self.trace.push(TraceEvent {
                        seq,
                        agent: address.to_string(),
                        kind: TraceKind::Sent,
                        subject: wire.schema_id.clone(),
                        keys,
                        summary: wire.encode(),
                    });
                    self.network.send(wire, seq);
                }
                self.emit_completion_events(address);
                true
            }
            Err(e) => {
                if std::env::var_os("PIPPI_TRACE_EMIT").is_some() {
                    eprintln!("emit {} by {address}: {e}", candidate.schema_id);
                }
                false
            }
        }
    }

    fn conditions_hold(&self, address: &str, conditions: &[Condition]) -> bool {
        let agent = match self.agents.get(address) {
            Some(a) => a,
            None => return false,
        };
        conditions.iter().all(|c| match c {
            Condition::ParamBound { protocol, param } => {
                !agent.adapter.store.query(protocol, param, &[]).is_empty()
            }
            Condition::ParamUnbound { protocol, param } => {
                agent.adapter.store.query(protocol, param, &[]).is_empty()
            }
            Condition::RoleIn {
                protocol,
                param,
                allowlist,
            } => agent
                .adapter
                .store
                .query(protocol, param, &[])
                .iter()
                .any(|(_, v)| v.as_str().map(|a| allowlist.iter().any(|x| x == a)).unwrap_or(false)),
            Condition::RoleNotIn {
                protocol,
                param,
                allowlist,
            } => {
                let bindings = agent.adapter.store.query(protocol, param, &[]);
                !bindings.is_empty()
                    && bindings.iter().all(|(_, v)| {
                        v.as_str().map(|a| !allowlist.iter().any(|x| x == a)).unwrap_or(true)
                    })
            }
            Condition::RegistryLacks { capability } => agent
                .registry()
                .map(|r| {
                    r.candidates_for_label(capability, &[agent.adapter.address().to_string()])
                        .is_empty()
                })
                .unwrap_or(true),
            Condition::RegistryHas { capability, min } => agent
                .registry()
                .map(|r| r.candidates_for_label(capability, &[]).len() >= *min)
                .unwrap_or(false),
        })
    }

    fn run_reception_rules(&mut self, address: &str, protocol: &str, wire: &crate::codec::WireMessage) {
        let rules: Vec<Rule> = match self.agents.get(address) {
            Some(a) => a.spec.rules.clone(),
            None => return,
        };
        for rule in rules {
            let Some(on) = &rule.on_receive else { continue };
            if on != &wire.schema_id {
                continue;
            }
            let Some(record) = &rule.record_contacts else {
                continue;
            };
            let agent = self.agents.get_mut(address).expect("agent exists");
            let Some(p) = agent.adapter.specs.protocols.get(protocol).cloned() else {
                continue;
            };
            let Some(schema) = p.schema(&wire.schema_id).cloned() else {
                continue;
            };
            let value_of = |name: &str| -> Option<Value> {
                schema
                    .slot_params
                    .iter()
                    .position(|sp| p.params[*sp].id == name)
                    .map(|pos| wire.payload[pos].clone())
            };
            let addresses: Vec<String> = match value_of(&record.from_param) {
                Some(Value::List(items)) => {
                    items.iter().filter_map(|v| v.as_str().map(str::to_string)).collect()
                }
                Some(v) => v.as_str().map(str::to_string).into_iter().collect(),
                None => Vec::new(),
            };
            let mut labels: Vec<String> = Vec::new();
            if let Some(cp) = &record.capability_param {
                match value_of(cp) {
                    Some(Value::List(items)) => {
                        labels.extend(items.iter().filter_map(|v| v.as_str().map(str::to_string)));
                    }
                    Some(v) => {
                        if let Some(s) = v.as_str() {
                            labels.push(s.to_string());
                        }
                    }
                    None => {}
                }
            }
            if let Some(fixed) = &record.capability {
                labels.push(fixed.clone());
            }
            if let Some(reg) = agent.adapter.registry.as_mut() {
                for addr in &addresses {
                    if labels.is_empty() {
                        reg.observe_address(addr);
                    }
                    for label in &labels {
                        reg.observe_label(addr, label);
                    }
                }
            }
        }
    }

    fn emit_completion_events(&mut self, address: &str) {
        let events = match self.agents.get_mut(address) {
            Some(agent) => agent.adapter.completion_events(),
            None => return,
        };
        for (protocol, ctx) in events {
            if let Some(agent) = self.agents.get_mut(address) {
                // Remember partners across enactments.
                let roles: BTreeSet<String> = agent
                    .adapter
                    .specs
                    .protocols
                    .get(&protocol)
                    .map(|p| {
                        p.role_params()
                            .into_iter()
                            .map(|i| p.params[i].id.clone())
                            .collect()
                    })
                    .unwrap_or_default();
                let me = agent.adapter.config.address.clone();
                let partners: Vec<(String, String)> = agent
                    .adapter
                    .store
                    .role_bindings(&protocol, &roles)
                    .into_iter()
                    .filter(|rb| rb.address != me && super::trace::tuple_matches(&rb.keys, &ctx))
                    .map(|rb| (rb.address, rb.role))
                    .collect();
                if let Some(reg) = agent.adapter.registry.as_mut() {
                    for (addr, role) in partners {
                        reg.observe_address(&addr);
                        let _ =
                            reg.record_outcome(&addr, &protocol, &role, &ctx.to_string(), "COMPLETE");
                    }
                }
            }
            let seq = self.next_seq();
            self.trace.push(TraceEvent {
                seq,
                agent: address.to_string(),
                kind: TraceKind::Complete,
                subject: protocol,
                keys: ctx.to_string(),
                summary: "-".to_string(),
            });
        }
    }

    /// Run to quiescence or the step limit, then evaluate assertions.
    pub fn run(mut self) -> Report {
        let mut idle_steps = 0u64;
        let mut steps = 0u64;
        let status = loop {
            if steps >= self.scenario.step_limit {
                break RunStatus::StepLimitExceeded;
            }
            let active = self.step();
            steps += 1;
            if active {
                idle_steps = 0;
            } else {
                idle_steps += 1;
            }
            // Quiescence: nothing in flight and a full delay window of
            // inactivity (messages may still be en route).
            if self.network.idle() && idle_steps > self.scenario.delivery.max_delay {
                break RunStatus::Quiescent;
            }
        };
        let assertions = self.evaluate_assertions(&status);
        Report {
            name: self.scenario.name.clone(),
            seed: self.seed,
            steps,
            status,
            trace: self.trace.iter().map(|t| t.to_string()).collect(),
            assertions,
            agents: self.agents,
        }
    }

    fn evaluate_assertions(&self, status: &RunStatus) -> Vec<AssertionResult> {
        self.scenario
            .assertions
            .iter()
            .map(|a| self.evaluate_assertion(a, status))
            .collect()
    }

    fn evaluate_assertion(&self, assertion: &Assertion, status: &RunStatus) -> AssertionResult {
        match assertion {
            Assertion::Complete {
                agent,
                protocol,
                expect,
            } => {
                let got = self
                    .agents
                    .get(agent)
                    .map(|a| {
                        // Any known context of the protocol's first global key.
                        let p = match a.adapter.specs.protocols.get(protocol) {
                            Some(p) => p,
                            None => return false,
                        };
                        let contexts: Vec<KeyTuple> = match p.key_model.global_keys.first() {
                            Some(k0) => a
                                .adapter
                                .store
                                .known_values(protocol, k0)
                                .into_iter()
                                .map(|v| KeyTuple::new(vec![(k0.clone(), v)]))
                                .collect(),
                            None => vec![KeyTuple::empty()],
                        };
                        contexts.iter().any(|c| a.adapter.is_complete(protocol, c))
                    })
                    .unwrap_or(false);
                AssertionResult {
                    description: format!("complete {agent} {protocol} expect={expect}"),
                    passed: got == *expect,
                    detail: format!("got {got}"),
                }
            }
            Assertion::ParamBound {
                agent,
                protocol,
                param,
                expect,
            } => {
                let got = self
                    .agents
                    .get(agent)
                    .map(|a| !a.adapter.store.query(protocol, param, &[]).is_empty())
                    .unwrap_or(false);
                AssertionResult {
                    description: format!("param_bound {agent} {protocol}/{param} expect={expect}"),
                    passed: got == *expect,
                    detail: format!("got {got}"),
                }
            }
            Assertion::TraceOrder { earlier, later } => {
                let first = |schema: &str| {
                    self.trace
                        .iter()
                        .find(|t| t.kind == TraceKind::Sent && t.subject == schema)
                        .map(|t| t.seq)
                };
                let (a, b) = (first(earlier), first(later));
                let passed = matches!((a, b), (Some(x), Some(y)) if x < y);
                AssertionResult {
                    description: format!("trace_order {earlier} < {later}"),
                    passed,
                    detail: format!("earlier={a:?} later={b:?}"),
                }
            }
            Assertion::Sent { schema, min, max } => {
                let count = self
                    .trace
                    .iter()
                    .filter(|t| t.kind == TraceKind::Sent && t.subject == *schema)
                    .count() as u64;
                let passed =
                    min.map(|m| count >= m).unwrap_or(true) && max.map(|m| count <= m).unwrap_or(true);
                AssertionResult {
                    description: format!("sent {schema} min={min:?} max={max:?}"),
                    passed,
                    detail: format!("count={count}"),
                }
            }
            Assertion::RegistryHas {
                agent,
                capability,
                address,
            } => {
                let passed = self
                    .agents
                    .get(agent)
                    .and_then(|a| a.registry())
                    .map(|r| r.candidates_for_label(capability, &[]).contains(address))
                    .unwrap_or(false);
                AssertionResult {
                    description: format!("registry_has {agent} {capability} {address}"),
                    passed,
                    detail: String::new(),
                }
            }
            Assertion::RegistryCount {
                agent,
                capability,
                expect,
            } => {
                let count = self
                    .agents
                    .get(agent)
                    .and_then(|a| a.registry())
                    .map(|r| r.candidates_for_label(capability, &[]).len())
                    .unwrap_or(0);
                AssertionResult {
                    description: format!("registry_count {agent} {capability} expect={expect}"),
                    passed: count == *expect,
                    detail: format!("count={count}"),
                }
            }
            Assertion::Quiescent => AssertionResult {
                description: "quiescent".into(),
                passed: *status == RunStatus::Quiescent,
                detail: format!("{status:?}"),
            },
        }
    }
}

/// Run a scenario file end to end.
pub fn run_scenario(scenario: Scenario, seed: u64) -> Result<Report, ScenarioError> {
    Ok(Simulation::new(scenario, seed)?.run())
}

fn json_to_value(v: &serde_json::Value) -> Value {
    match v {
        serde_json::Value::Null => Value::Null,
        serde_json::Value::Bool(b) => Value::Bool(*b),
        serde_json::Value::Number(n) => n
            .as_i64()
            .map(Value::Int)
            .unwrap_or_else(|| Value::Dec(n.as_f64().unwrap_or(0.0))),
        serde_json::Value::String(s) => Value::Str(s.clone()),
        serde_json::Value::Array(items) => Value::List(items.iter().map(json_to_value).collect()),
        serde_json::Value::Object(_) => Value::Null,
    }
}

/// Expand `$`-selectors in rule values.
fn resolve_value(
    agent: &mut Agent,
    raw: &serde_json::Value,
    protocol: &str,
    context: &KeyTuple,
) -> Value {
    if let serde_json::Value::String(s) = raw {
        if let Some(param) = s.strip_prefix("$candidates_from:") {
            // Labels from a bound parameter of this enactment; candidates of
            // each label from the agent's registry.
            let labels: Vec<String> = agent
                .adapter
                .store
                .query(protocol, param, &context.0)
                .into_iter()
                .flat_map(|(_, v)| match v {
                    Value::List(items) => {
                        items.iter().filter_map(|x| x.as_str().map(str::to_string)).collect()
                    }
                    other => other.as_str().map(str::to_string).into_iter().collect::<Vec<_>>(),
                })
                .collect();
            let mut out: Vec<Value> = Vec::new();
            if let Some(reg) = agent.registry() {
                for label in labels {
                    for addr in reg.candidates_for_label(&label, &[]) {
                        if !out.iter().any(|v| v.as_str() == Some(addr.as_str())) {
                            out.push(Value::Id(addr));
                        }
                    }
                }
            }
            return Value::List(out);
        }
        if s == "$self" {
            return Value::Id(agent.adapter.config.address.clone());
        }
        if let Some(prefix) = s.strip_prefix("$seq:") {
            let n = agent.seq_counters.entry(prefix.to_string()).or_insert(0);
            *n += 1;
            return Value::Id(format!("{prefix}-{n}"));
        }
        if let Some(label) = s.strip_prefix("$contact:") {
            if let Some(reg) = agent.registry() {
                if let Some(first) = reg
                    .candidates_for_label(label, &[agent.adapter.config.address.clone()])
                    .first()
                {
                    return Value::Id(first.clone());
                }
            }
            return Value::Null;
        }
        if let Some(label) = s.strip_prefix("$candidates:") {
            let items = agent
                .registry()
                .map(|r| r.candidates_for_label(label, &[agent.adapter.config.address.clone()]))
                .unwrap_or_default();
            return Value::List(items.into_iter().map(Value::Id).collect());
        }
        if s == "$known_contacts" {
            let items = agent
                .registry()
                .map(|r| r.addresses())
                .unwrap_or_default()
                .into_iter()
                .filter(|a| a != &agent.adapter.config.address)
                .collect::<Vec<_>>();
            return Value::List(items.into_iter().map(Value::Id).collect());
        }
    }
    json_to_value(raw)
}

fn resolve_recipient(agent: &mut Agent, rule_idx: usize, selector: &str) -> Option<String> {
    if let Some(label) = selector.strip_prefix("$contact:") {
        return agent
            .registry()?
            .candidates_for_label(label, &[agent.adapter.config.address.clone()])
            .first()
            .cloned();
    }
    if selector == "$next_unqueried" {
        let me = agent.adapter.config.address.clone();
        let queried = agent.rule_targets[rule_idx].clone();
        let next = agent
            .registry()?
            .addresses()
            .into_iter()
            .find(|a| a != &me && !queried.contains(a))?;
        agent.rule_targets[rule_idx].insert(next.clone());
        return Some(next);
    }
    Some(selector.to_string())
}
