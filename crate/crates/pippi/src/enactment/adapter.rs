//! The protocol adapter: per-agent emission and reception under the
//! information causality rules.
//!
//! Emission of a schema requires, in the sender's own state: every `in`
//! parameter bound for the key context, every `out` parameter unbound (it is
//! bound by sending), every `nil` parameter unbound, and addresses for all
//! recipients. Reception is unconstrained: a message integrates whenever its
//! schema is known, and conflicting payloads are quarantined whole.

use super::store::{Direction, EnactmentStore, HistoryEvent, KeyTuple, WriteOutcome};
use crate::codec::{self, Value, WireMessage};
use crate::lang::{Adornment, TypeName};
use crate::model::{
    match_late_interface, Formula, Loaded, ResolvedProtocol, ResolvedSchema,
    ResolvedTarget, SlotConstraint,
};
use crate::registry::Registry;
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("schema `{schema}` is not enabled: {reason}")]
    NotEnabled { schema: String, reason: String },
    #[error("parameter `{param}` is already bound for this context (out requires unbound)")]
    DoubleBind { param: String },
    #[error("no value supplied for out parameter `{0}`")]
    MissingValue(String),
    #[error("no address for recipient role `{0}`")]
    MissingRecipient(String),
    #[error("constraint violation on `{param}`: {constraint}")]
    ConstraintViolation { param: String, constraint: String },
    #[error("unknown schema `{0}`")]
    UnknownSchema(String),
}

#[derive(Debug, Error)]
pub enum ReceiveError {
    #[error("unknown schema `{0}`")]
    UnknownSchema(String),
    #[error("integrity violation on `{param}`: bound to {old}, message carries {new}")]
    IntegrityViolation { param: String, old: Value, new: Value },
    #[error("malformed message: {0}")]
    Malformed(String),
}

/// Outcome of integrating one wire message.
#[derive(Clone, Debug)]
pub enum Reception {
    Integrated {
        protocol: String,
        schema_id: String,
        context: KeyTuple,
        newly_bound: Vec<String>,
    },
    /// Identical payload seen before; nothing changed.
    Duplicate,
}

/// One emission candidate: the schema, its key context, the inputs it would
/// carry, and the parameters the sender must bind.
#[derive(Clone, Debug)]
pub struct EnabledMessage {
    pub protocol: String,
    pub schema_id: String,
    pub context: KeyTuple,
    pub required_ins: BTreeMap<String, Value>,
    pub open_outs: Vec<String>,
    pub open_roles: Vec<String>,
    pub open_opts: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct AdapterConfig {
    pub address: String,
    /// (protocol, role) pairs this agent is willing to play.
    pub plays: Vec<(String, String)>,
    /// Named handlers per schema id; dispatch is up to the embedding agent.
    pub handlers: BTreeMap<String, String>,
    pub seed: u64,
}

/// An active identity link created by a late-bound protocol reference: the
/// metaprotocol parameter and the target protocol parameter denote the same
/// information.
#[derive(Clone, Debug)]
struct Link {
    meta: (String, String, KeyTuple),
    target: (String, String, KeyTuple),
    is_set: bool,
}

pub struct Adapter {
    pub config: AdapterConfig,
    pub specs: Arc<Loaded>,
    pub store: EnactmentStore,
    pub registry: Option<Registry>,
    links: Vec<Link>,
    activated_refs: BTreeSet<(String, usize, KeyTuple)>,
    quarantine: Vec<WireMessage>,
    rng: ChaCha8Rng,
    local_counters: BTreeMap<(String, String, KeyTuple), i64>,
    seq: u64,
}

impl Adapter {
    pub fn new(config: AdapterConfig, specs: Arc<Loaded>, registry: Option<Registry>) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Adapter {
            config,
            specs,
            store: EnactmentStore::new(),
            registry,
            links: Vec::new(),
            activated_refs: BTreeSet::new(),
            quarantine: Vec::new(),
            rng,
            local_counters: BTreeMap::new(),
            seq: 0,
        }
    }

    pub fn address(&self) -> &str {
        &self.config.address
    }

    /// Resolve play entries through aliases once the specs are known, so a
    /// configured role `J` matches the parameter `Judge`.
    pub fn canonical_plays(&self) -> Vec<(String, String)> {
        self.config
            .plays
            .iter()
            .filter_map(|(proto, role)| {
                let p = self.specs.protocols.get(proto)?;
                let idx = p.param_index(role)?;
                Some((proto.clone(), p.params[idx].id.clone()))
            })
            .collect()
    }

    /// Seed a binding before enactment starts (externally bound `in`
    /// parameters and statically configured role bindings).
    pub fn seed_binding(&mut self, protocol: &str, param: &str, keys: &KeyTuple, value: Value) {
        let is_set = self
            .specs
            .protocols
            .get(protocol)
            .and_then(|p| p.param_index(param).map(|i| p.params[i].qualifiers.set))
            .unwrap_or(false);
        let canonical = self
            .specs
            .protocols
            .get(protocol)
            .and_then(|p| p.param_index(param).map(|i| p.params[i].id.clone()))
            .unwrap_or_else(|| param.to_string());
        self.store.write(protocol, &canonical, keys, value, is_set);
    }

    // ------------------------------------------------------------------
    // Enabledness
    // ------------------------------------------------------------------

    /// All emission candidates over every known key context.
    pub fn enabled_all(&self) -> Vec<EnabledMessage> {
        let mut out = Vec::new();
        for (proto, role) in self.canonical_plays() {
            let Some(p) = self.specs.protocols.get(&proto) else {
                continue;
            };
            for schema in &p.schemas {
                if p.params[schema.sender].id != role {
                    continue;
                }
                for ctx in self.candidate_contexts(p, &proto, schema) {
                    out.extend(self.enabled_for(p, &proto, schema, &ctx));
                }
            }
        }
        out
    }

    /// Emission candidates for one schema in one key context.
    pub fn enabled(&self, protocol: &str, key_context: &KeyTuple) -> Vec<EnabledMessage> {
        let mut out = Vec::new();
        let plays = self.canonical_plays();
        let Some(p) = self.specs.protocols.get(protocol) else {
            return out;
        };
        for schema in &p.schemas {
            let sender_id = &p.params[schema.sender].id;
            if !plays.iter().any(|(pr, r)| pr == protocol && r == sender_id) {
                continue;
            }
            out.extend(self.enabled_for(p, protocol, schema, key_context));
        }
        out
    }

    /// Key contexts a schema could fire in: one value combination per `in`
    /// key slot, or the empty context when the schema binds all its keys.
    fn candidate_contexts(
        &self,
        p: &ResolvedProtocol,
        proto: &str,
        schema: &ResolvedSchema,
    ) -> Vec<KeyTuple> {
        let mut in_keys: Vec<String> = Vec::new();
        for (pos, slot) in schema.payload.iter().enumerate() {
            if !slot.key {
                continue;
            }
            let param = &p.params[schema.slot_params[pos]];
            let bound_any = slot.adornment == Adornment::Any
                && !self.store.known_values(proto, &param.id).is_empty();
            if slot.adornment == Adornment::In || bound_any {
                in_keys.push(param.id.clone());
            }
        }
        if in_keys.is_empty() {
            return vec![KeyTuple::empty()];
        }
        let mut contexts = vec![Vec::new()];
        for key in in_keys {
            let values = self.store.known_values(proto, &key);
            if values.is_empty() {
                return Vec::new();
            }
            let mut grown = Vec::new();
            for ctx in &contexts {
                for v in &values {
                    let mut c = ctx.clone();
                    c.push((key.clone(), v.clone()));
                    grown.push(c);
                }
            }
            contexts = grown;
        }
        contexts.into_iter().map(KeyTuple::new).collect()
    }

    fn enabled_for(
        &self,
        p: &ResolvedProtocol,
        proto: &str,
        schema: &ResolvedSchema,
        ctx: &KeyTuple,
    ) -> Option<EnabledMessage> {
        // Sender must be this agent, or bindable to it by the emission (an
        // out sender, or one the declaration presumes bound externally).
        let sender_id = &p.params[schema.sender].id;
        match self.store.lookup(proto, sender_id, ctx) {
            Some(v) => {
                if v.as_str() != Some(self.address()) {
                    return None;
                }
            }
            None => {
                if schema.sender_adornment != Adornment::Out && !schema.sender_defaulted {
                    return None;
                }
            }
        }
        let mut required_ins = BTreeMap::new();
        let mut open_outs = Vec::new();
        let mut open_opts = Vec::new();
        let mut open_payload_roles = Vec::new();
        // A schema that binds a fresh local key writes all its out slots into
        // a brand-new sub-context; they cannot be pre-bound.
        let fresh_scope = schema
            .payload
            .iter()
            .any(|s| s.key && s.local && matches!(s.adornment, Adornment::Out | Adornment::Any));
        for (pos, slot) in schema.payload.iter().enumerate() {
            let param = &p.params[schema.slot_params[pos]];
            let existing = self.store.lookup(proto, &param.id, ctx).cloned();
            match slot.adornment {
                Adornment::In => match existing {
                    Some(v) => {
                        required_ins.insert(param.id.clone(), v);
                    }
                    None => return None,
                },
                Adornment::Out => {
                    if slot.key || slot.set || fresh_scope {
                        // Fresh key value, set extension, or a slot scoped by
                        // a fresh local key; never blocked by an existing
                        // binding.
                        if !slot.key {
                            open_outs.push(param.id.clone());
                        }
                    } else if existing.is_some() {
                        return None;
                    } else if param.is_role() {
                        open_payload_roles.push(param.id.clone());
                    } else {
                        open_outs.push(param.id.clone());
                    }
                }
                Adornment::Any => match existing {
                    Some(v) => {
                        required_ins.insert(param.id.clone(), v);
                    }
                    None => {
                        if param.is_role() {
                            open_payload_roles.push(param.id.clone());
                        } else if !slot.key {
                            open_outs.push(param.id.clone());
                        }
                    }
                },
                Adornment::Nil => {
                    if existing.is_some() {
                        return None;
                    }
                }
                Adornment::Opt => {
                    if existing.is_none() {
                        open_opts.push(param.id.clone());
                    }
                }
                Adornment::Unspecified => return None,
            }
        }
        // Recipient addresses: bound, bound by a role value in this payload,
        // or chosen by the emitter (out recipients).
        let mut open_roles = open_payload_roles;
        for r in &schema.recipients {
            let id = &p.params[r.param].id;
            if self.store.lookup(proto, id, ctx).is_some() || open_roles.contains(id) {
                continue;
            }
            if r.adornment == Adornment::Out || r.defaulted {
                open_roles.push(id.clone());
            } else {
                return None;
            }
        }
        Some(EnabledMessage {
            protocol: proto.to_string(),
            schema_id: schema.id.clone(),
            context: ctx.clone(),
            required_ins,
            open_outs,
            open_roles,
            open_opts,
        })
    }

    // ------------------------------------------------------------------
    // Emission
    // ------------------------------------------------------------------

    /// Emit one schema instance. Binds out values and role bindings
    /// atomically, evaluates constraints, appends to history, and returns one
    /// wire message per recipient.
    pub fn emit(
        &mut self,
        protocol: &str,
        schema_id: &str,
        key_context: &KeyTuple,
        out_values: &BTreeMap<String, Value>,
        recipient_bindings: &BTreeMap<String, String>,
    ) -> Result<Vec<WireMessage>, EmitError> {
        let p = self
            .specs
            .protocols
            .get(protocol)
            .ok_or_else(|| EmitError::UnknownSchema(schema_id.to_string()))?
            .clone();
        let schema = p
            .schema(schema_id)
            .ok_or_else(|| EmitError::UnknownSchema(schema_id.to_string()))?
            .clone();

        self.check_enabled(&p, protocol, &schema, key_context)?;

        // Assemble the full payload and the message's own key tuple.
        let mut values: Vec<Value> = Vec::with_capacity(schema.payload.len());
        let mut tuple_pairs: Vec<(String, Value)> = key_context.0.clone();
        for (pos, slot) in schema.payload.iter().enumerate() {
            let param = &p.params[schema.slot_params[pos]];
            let existing = self.store.lookup(protocol, &param.id, key_context).cloned();
            let value = match slot.adornment {
                Adornment::In => existing.expect("checked by enabledness"),
                Adornment::Nil => Value::Null,
                Adornment::Opt => out_values.get(&param.id).cloned().unwrap_or(Value::Null),
                Adornment::Out | Adornment::Any => {
                    if slot.adornment == Adornment::Any {
                        if let Some(v) = existing {
                            v
                        } else {
                            self.out_value(protocol, slot, param, key_context, out_values, recipient_bindings)?
                        }
                    } else {
                        self.out_value(protocol, slot, param, key_context, out_values, recipient_bindings)?
                    }
                }
                Adornment::Unspecified => {
                    return Err(EmitError::NotEnabled {
                        schema: schema_id.into(),
                        reason: format!("parameter `{}` has no resolved adornment", param.id),
                    });
                }
            };
            if slot.key && tuple_pairs.iter().all(|(k, _)| k != &param.id) {
                tuple_pairs.push((param.id.clone(), value.clone()));
            }
            values.push(value);
        }
        let tuple = KeyTuple::new(
            tuple_pairs
                .into_iter()
                .filter(|(k, _)| {
                    schema
                        .payload
                        .iter()
                        .enumerate()
                        .any(|(pos, slot)| slot.key && p.params[schema.slot_params[pos]].id == *k)
                })
                .collect(),
        );

        // Recipient addresses: existing binding, a role value carried in this
        // payload, or an explicit choice by the emitter.
        let mut recipient_addrs = Vec::new();
        for r in &schema.recipients {
            let (rp, ad) = (r.param, if r.defaulted { Adornment::Out } else { r.adornment });
            let id = p.params[rp].id.clone();
            let from_store = self
                .store
                .lookup(protocol, &id, &tuple)
                .and_then(|v| v.as_str().map(str::to_string));
            let from_payload = schema
                .slot_params
                .iter()
                .position(|sp| p.params[*sp].id == id)
                .and_then(|pos| values[pos].as_str().map(str::to_string));
            let aliases = &p.params[rp].aliases;
            let by_alias = |map: &BTreeMap<String, String>| -> Option<String> {
                map.get(&id)
                    .cloned()
                    .or_else(|| aliases.iter().find_map(|a| map.get(a).cloned()))
            };
            let addr = from_store
                .or(from_payload)
                .or_else(|| by_alias(recipient_bindings))
                .or_else(|| {
                    out_values
                        .get(&id)
                        .or_else(|| aliases.iter().find_map(|a| out_values.get(a)))
                        .and_then(|v| v.as_str())
                        .map(str::to_string)
                })
                .ok_or_else(|| EmitError::MissingRecipient(id.clone()))?;
            recipient_addrs.push((id, addr, ad));
        }

        // Role bindings made by this emission, visible to constraints.
        let mut pending: BTreeMap<String, Value> = BTreeMap::new();
        let sender_pending = p.params[schema.sender].id.clone();
        if self.store.lookup(protocol, &sender_pending, &tuple).is_none() {
            pending.insert(sender_pending, Value::Id(self.address().to_string()));
        }
        for (id, addr, ad) in &recipient_addrs {
            if *ad == Adornment::Out {
                pending.insert(id.clone(), Value::Id(addr.clone()));
            }
        }

        self.check_constraints(&p, protocol, &schema, &values, &tuple, &pending)?;

        // Atomic integration: payload bindings, sender self-binding, new
        // recipient role bindings.
        let mut writes: Vec<(String, KeyTuple, Value, bool)> = Vec::new();
        for (pos, slot) in schema.payload.iter().enumerate() {
            let param = &p.params[schema.slot_params[pos]];
            if values[pos].is_null() && (slot.opt || slot.adornment == Adornment::Nil) {
                continue;
            }
            writes.push((param.id.clone(), tuple.clone(), values[pos].clone(), slot.set));
        }
        let sender_id = p.params[schema.sender].id.clone();
        if self.store.lookup(protocol, &sender_id, &tuple).is_none() {
            writes.push((
                sender_id.clone(),
                tuple.clone(),
                Value::Id(self.address().to_string()),
                false,
            ));
        }
        for (id, addr, ad) in &recipient_addrs {
            if *ad == Adornment::Out && self.store.lookup(protocol, id, &tuple).is_none() {
                writes.push((id.clone(), tuple.clone(), Value::Id(addr.clone()), false));
            }
        }
        for (param, keys, value, is_set) in &writes {
            if let Some(existing) = self.store.peek(protocol, param, keys) {
                if !is_set && !existing.same(value) {
                    return Err(EmitError::DoubleBind { param: param.clone() });
                }
            }
        }
        for (param, keys, value, is_set) in writes {
            self.store.write(protocol, &param, &keys, value, is_set);
        }
        self.record_associations(&p, protocol, &schema, &values);

        let key_values: Vec<Value> = schema
            .key_positions()
            .into_iter()
            .map(|i| values[i].clone())
            .collect();
        let mut wires = Vec::new();
        for (_, addr, _) in &recipient_addrs {
            let wire = WireMessage {
                schema_id: schema.id.clone(),
                sender_address: self.address().to_string(),
                recipient_address: addr.clone(),
                key_values: key_values.clone(),
                payload: values.clone(),
            };
            self.seq += 1;
            self.store.history.push(HistoryEvent {
                seq: self.seq,
                direction: Direction::Sent,
                protocol: protocol.to_string(),
                wire: wire.clone(),
            });
            wires.push(wire);
        }

        self.after_integration(protocol);
        Ok(wires)
    }

    fn out_value(
        &mut self,
        protocol: &str,
        slot: &crate::model::PayloadSlot,
        param: &crate::model::ParamInfo,
        ctx: &KeyTuple,
        out_values: &BTreeMap<String, Value>,
        recipient_bindings: &BTreeMap<String, String>,
    ) -> Result<Value, EmitError> {
        // Values may be supplied under the composition parameter's id, one of
        // its aliases, or the schema's own (wire contract) name.
        if let Some(v) = out_values
            .get(&param.id)
            .or_else(|| param.aliases.iter().find_map(|a| out_values.get(a)))
            .or_else(|| out_values.get(&slot.name))
        {
            let v = v.clone();
            return Ok(if slot.set && !matches!(v, Value::List(_)) {
                Value::List(vec![v])
            } else {
                v
            });
        }
        if param.is_role() {
            if let Some(addr) = recipient_bindings.get(&param.id) {
                return Ok(Value::Id(addr.clone()));
            }
            return Err(EmitError::MissingValue(param.id.clone()));
        }
        if slot.key && slot.local {
            let scope_key = (protocol.to_string(), param.id.clone(), ctx.clone());
            let n = self.local_counters.entry(scope_key).or_insert(0);
            *n += 1;
            return Ok(Value::Int(*n));
        }
        if slot.key {
            return Ok(Value::Id(self.fresh_uuid()));
        }
        Err(EmitError::MissingValue(param.id.clone()))
    }

    /// Opaque 128-bit identifier as lowercase hex.
    fn fresh_uuid(&mut self) -> String {
        let mut bytes = [0u8; 16];
        self.rng.fill_bytes(&mut bytes);
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_enabled(
        &self,
        p: &ResolvedProtocol,
        protocol: &str,
        schema: &ResolvedSchema,
        ctx: &KeyTuple,
    ) -> Result<(), EmitError> {
        // Distinguish the double-bind case for a precise error.
        let fresh_scope = schema
            .payload
            .iter()
            .any(|s| s.key && s.local && matches!(s.adornment, Adornment::Out | Adornment::Any));
        for (pos, slot) in schema.payload.iter().enumerate() {
            let param = &p.params[schema.slot_params[pos]];
            if slot.adornment == Adornment::Out
                && !slot.key
                && !slot.set
                && !fresh_scope
                && self.store.lookup(protocol, &param.id, ctx).is_some()
            {
                return Err(EmitError::DoubleBind {
                    param: param.id.clone(),
                });
            }
        }
        if self.enabled_for(p, protocol, schema, ctx).is_some() {
            return Ok(());
        }
        // Name the violated requirement.
        let sender_id = &p.params[schema.sender].id;
        if let Some(v) = self.store.lookup(protocol, sender_id, ctx) {
            if v.as_str() != Some(self.address()) {
                return Err(EmitError::NotEnabled {
                    schema: schema.id.clone(),
                    reason: format!("sender role `{sender_id}` is bound to another agent"),
                });
            }
        } else if schema.sender_adornment != Adornment::Out && !schema.sender_defaulted {
            return Err(EmitError::NotEnabled {
                schema: schema.id.clone(),
                reason: format!("sender role `{sender_id}` (in) is unbound"),
            });
        }
        for (pos, slot) in schema.payload.iter().enumerate() {
            let param = &p.params[schema.slot_params[pos]];
            let bound = self.store.lookup(protocol, &param.id, ctx).is_some();
            match slot.adornment {
                Adornment::In if !bound => {
                    return Err(EmitError::NotEnabled {
                        schema: schema.id.clone(),
                        reason: format!("in parameter `{}` is unbound", param.id),
                    });
                }
                Adornment::Nil if bound => {
                    return Err(EmitError::NotEnabled {
                        schema: schema.id.clone(),
                        reason: format!("nil parameter `{}` is bound", param.id),
                    });
                }
                _ => {}
            }
        }
        for r in &schema.recipients {
            let id = &p.params[r.param].id;
            if self.store.lookup(protocol, id, ctx).is_none()
                && r.adornment != Adornment::Out
                && !r.defaulted
            {
                return Err(EmitError::NotEnabled {
                    schema: schema.id.clone(),
                    reason: format!("recipient role `{id}` is unbound"),
                });
            }
        }
        Err(EmitError::NotEnabled {
            schema: schema.id.clone(),
            reason: "causality constraints unsatisfied".into(),
        })
    }

    fn check_constraints(
        &self,
        p: &ResolvedProtocol,
        protocol: &str,
        schema: &ResolvedSchema,
        values: &[Value],
        tuple: &KeyTuple,
        pending: &BTreeMap<String, Value>,
    ) -> Result<(), EmitError> {
        for (pos, slot) in schema.payload.iter().enumerate() {
            let param = &p.params[schema.slot_params[pos]];
            let value = &values[pos];
            if value.is_null() {
                continue;
            }
            for c in &slot.constraints {
                match c {
                    SlotConstraint::Type(t) => {
                        let ok = match t {
                            TypeName::Role | TypeName::Protocol => {
                                matches!(value, Value::Id(_) | Value::Str(_))
                                    || matches!(value, Value::List(_))
                            }
                            TypeName::Name(_) => true,
                        };
                        if !ok {
                            return Err(EmitError::ConstraintViolation {
                                param: param.id.clone(),
                                constraint: format!("expected {t:?} value"),
                            });
                        }
                    }
                    SlotConstraint::Relation { op, target } => {
                        let target_value: Option<Value> = match target {
                            ResolvedTarget::Param(t) => {
                                let t_id = &p.params[*t].id;
                                // Prefer a value carried by this payload, then
                                // role bindings made by this emission.
                                schema
                                    .slot_params
                                    .iter()
                                    .position(|sp| &p.params[*sp].id == t_id)
                                    .map(|i| values[i].clone())
                                    .or_else(|| pending.get(t_id).cloned())
                                    .or_else(|| self.store.lookup(protocol, t_id, tuple).cloned())
                            }
                            ResolvedTarget::Str(s) => Some(Value::Str(s.clone())),
                            ResolvedTarget::Int(i) => Some(Value::Int(*i)),
                            ResolvedTarget::Dec(d) => Some(Value::Dec(*d)),
                        };
                        let Some(target_value) = target_value else {
                            return Err(EmitError::ConstraintViolation {
                                param: param.id.clone(),
                                constraint: "relation target is unbound".into(),
                            });
                        };
                        let ok = eval_relation(*op, value, &target_value);
                        if !ok {
                            return Err(EmitError::ConstraintViolation {
                                param: param.id.clone(),
                                constraint: format!("{} {}", op.symbol(), target_value),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Reception
    // ------------------------------------------------------------------

    /// Integrate a wire message into this agent's state. Quarantines the
    /// whole message on conflict (no partial integration) and retries
    /// quarantined messages after every successful integration.
    pub fn receive(&mut self, wire: &WireMessage) -> Result<Reception, ReceiveError> {
        match self.integrate(wire, false) {
            Ok(Reception::Integrated {
                protocol,
                schema_id,
                context,
                newly_bound,
            }) => {
                self.retry_quarantine();
                Ok(Reception::Integrated {
                    protocol,
                    schema_id,
                    context,
                    newly_bound,
                })
            }
            Ok(other) => Ok(other),
            Err(e) => {
                self.quarantine.push(wire.clone());
                Err(e)
            }
        }
    }

    /// Reconstruct the emitting side of a sent message: the same integration
    /// a live emission performs, used by trace replay.
    pub fn replay_sent(&mut self, wire: &WireMessage) -> Result<Reception, ReceiveError> {
        match self.integrate(wire, true) {
            Ok(r) => {
                self.retry_quarantine();
                Ok(r)
            }
            Err(e) => Err(e),
        }
    }

    fn integrate(&mut self, wire: &WireMessage, as_sender: bool) -> Result<Reception, ReceiveError> {
        // The receiver's own view: the first played protocol whose schema
        // table has this id.
        let mut found: Option<(String, ResolvedSchema, ResolvedProtocol)> = None;
        for (proto, _) in self.canonical_plays() {
            if let Some(p) = self.specs.protocols.get(&proto) {
                if let Some(s) = p.schema(&wire.schema_id) {
                    found = Some((proto.clone(), s.clone(), p.clone()));
                    break;
                }
            }
        }
        let (proto, schema, p) =
            found.ok_or_else(|| ReceiveError::UnknownSchema(wire.schema_id.clone()))?;
        if wire.payload.len() != schema.payload.len() {
            return Err(ReceiveError::Malformed(format!(
                "payload has {} values, schema `{}` expects {}",
                wire.payload.len(),
                schema.id,
                schema.payload.len()
            )));
        }

        // Key tuple from the payload's key positions.
        let mut pairs = Vec::new();
        for pos in schema.key_positions() {
            pairs.push((
                p.params[schema.slot_params[pos]].id.clone(),
                wire.payload[pos].clone(),
            ));
        }
        let tuple = KeyTuple::new(pairs);

        // Candidate writes, checked before any integration.
        let mut writes: Vec<(String, Value, bool)> = Vec::new();
        for (pos, slot) in schema.payload.iter().enumerate() {
            let param = &p.params[schema.slot_params[pos]];
            let value = wire.payload[pos].clone();
            if value.is_null() && (slot.opt || slot.adornment == Adornment::Nil) {
                continue;
            }
            let value = match (&value, param.is_role() || slot.key || param.is_protocol()) {
                (Value::Str(s), true) => Value::Id(s.clone()),
                _ => value,
            };
            writes.push((param.id.clone(), value, slot.set));
        }
        // Envelope knowledge: the schema's sender role is the sender address.
        let sender_id = p.params[schema.sender].id.clone();
        if self.store.peek(&proto, &sender_id, &tuple).is_none()
            && !writes.iter().any(|(n, _, _)| n == &sender_id)
        {
            writes.push((sender_id, Value::Id(wire.sender_address.clone()), false));
        }
        // Addressed as a role: when exactly one recipient role is open, the
        // addressee fills it. A replayed emission instead rebinds the out
        // recipient it chose.
        let open_recipients: Vec<usize> = schema
            .recipients
            .iter()
            .filter(|r| (r.adornment == Adornment::Out || r.defaulted) || !as_sender)
            .filter(|r| {
                let id = &p.params[r.param].id;
                self.store.peek(&proto, id, &tuple).is_none()
                    && !writes.iter().any(|(n, _, _)| n == id)
            })
            .map(|r| r.param)
            .collect();
        if open_recipients.len() == 1 {
            if as_sender {
                let id = p.params[open_recipients[0]].id.clone();
                writes.push((id, Value::Id(wire.recipient_address.clone()), false));
            } else if wire.recipient_address == self.config.address {
                let id = p.params[open_recipients[0]].id.clone();
                writes.push((id, Value::Id(self.config.address.clone()), false));
            }
        }

        for (param, value, is_set) in &writes {
            if *is_set {
                continue;
            }
            if let Some(existing) = self.store.peek(&proto, param, &tuple) {
                if !existing.same(value) {
                    return Err(ReceiveError::IntegrityViolation {
                        param: param.clone(),
                        old: existing.clone(),
                        new: value.clone(),
                    });
                }
            }
        }
        let mut newly_bound = Vec::new();
        for (param, value, is_set) in writes {
            match self.store.write(&proto, &param, &tuple, value, is_set) {
                WriteOutcome::New | WriteOutcome::Extended => newly_bound.push(param),
                WriteOutcome::Duplicate => {}
                WriteOutcome::Conflict { .. } => unreachable!("checked above"),
            }
        }
        if newly_bound.is_empty() {
            return Ok(Reception::Duplicate);
        }
        self.record_associations(&p, &proto, &schema, &wire.payload);
        self.seq += 1;
        self.store.history.push(HistoryEvent {
            seq: self.seq,
            direction: if as_sender { Direction::Sent } else { Direction::Received },
            protocol: proto.clone(),
            wire: wire.clone(),
        });
        self.after_integration(&proto);
        Ok(Reception::Integrated {
            protocol: proto,
            schema_id: schema.id.clone(),
            context: tuple,
            newly_bound,
        })
    }

    fn retry_quarantine(&mut self) {
        loop {
            let pending = std::mem::take(&mut self.quarantine);
            let before = pending.len();
            let mut progressed = false;
            for wire in pending {
                match self.integrate(&wire, false) {
                    Ok(Reception::Integrated { .. }) => progressed = true,
                    Ok(Reception::Duplicate) => {}
                    Err(_) => self.quarantine.push(wire),
                }
            }
            if !progressed || self.quarantine.is_empty() || self.quarantine.len() == before {
                break;
            }
        }
    }

    pub fn quarantined(&self) -> &[WireMessage] {
        &self.quarantine
    }

    fn record_associations(
        &mut self,
        p: &ResolvedProtocol,
        proto: &str,
        schema: &ResolvedSchema,
        values: &[Value],
    ) {
        let globals: Vec<(usize, &crate::model::PayloadSlot)> = schema
            .payload
            .iter()
            .enumerate()
            .filter(|(_, s)| s.key && !s.local)
            .collect();
        for (i, a) in &globals {
            for (j, b) in &globals {
                if i >= j {
                    continue;
                }
                let invertible = (a.adornment == Adornment::In && b.adornment == Adornment::Out)
                    || (a.adornment == Adornment::Out && b.adornment == Adornment::In);
                if invertible {
                    let pa = p.params[schema.slot_params[*i]].id.clone();
                    let pb = p.params[schema.slot_params[*j]].id.clone();
                    self.store
                        .associate(proto, (pa, values[*i].clone()), (pb, values[*j].clone()));
                }
            }
        }
    }

    // ------------------------------------------------------------------
    // Late binding and completion
    // ------------------------------------------------------------------

    /// Activate identity links for late-bound protocol references whose
    /// protocol parameter and key arguments have become bound, then propagate
    /// values across all active links.
    fn after_integration(&mut self, proto: &str) {
        let Some(p) = self.specs.protocols.get(proto).cloned() else {
            return;
        };
        for (ref_idx, late) in p.late_refs.iter().enumerate() {
            let target_id = &p.params[late.target_param].id;
            for (scope, value) in self.store.query(proto, target_id, &[]) {
                let scope = scope.clone();
                let key = (proto.to_string(), ref_idx, scope.clone());
                if self.activated_refs.contains(&key) {
                    continue;
                }
                let Some(name) = value.as_str().map(str::to_string) else {
                    continue;
                };
                let Some(target) = self.specs.protocols.get(&name).cloned() else {
                    continue;
                };
                let Ok(pairs) = match_late_interface(&late.args, &target) else {
                    continue;
                };
                // The target's key context must be derivable from already
                // bound arguments.
                let mut target_ctx_pairs = Vec::new();
                let mut ready = true;
                for gk in &target.key_model.global_keys {
                    let t_idx = match target.param_index(gk) {
                        Some(i) => i,
                        None => continue,
                    };
                    let arg_idx = pairs.iter().find(|(t, _)| *t == t_idx).map(|(_, a)| *a);
                    let bound = arg_idx.and_then(|a| {
                        self.store
                            .lookup(proto, &p.params[a].id, &scope)
                            .cloned()
                    });
                    match bound {
                        Some(v) => target_ctx_pairs.push((gk.clone(), v)),
                        None => {
                            ready = false;
                            break;
                        }
                    }
                }
                if !ready {
                    continue;
                }
                let target_ctx = KeyTuple::new(target_ctx_pairs);
                self.activated_refs.insert(key);
                for (t_idx, a_idx) in &pairs {
                    let is_set = target.params[*t_idx].qualifiers.set
                        || p.params[*a_idx].qualifiers.set;
                    self.links.push(Link {
                        meta: (proto.to_string(), p.params[*a_idx].id.clone(), scope.clone()),
                        target: (name.clone(), target.params[*t_idx].id.clone(), target_ctx.clone()),
                        is_set,
                    });
                }
            }
        }
        self.propagate_links();
    }

    /// Copy bindings across identity links in both directions.
    fn propagate_links(&mut self) {
        loop {
            let mut changed = false;
            for link in self.links.clone() {
                let a = self
                    .store
                    .peek(&link.meta.0, &link.meta.1, &link.meta.2)
                    .cloned();
                let b = self
                    .store
                    .peek(&link.target.0, &link.target.1, &link.target.2)
                    .cloned();
                match (a, b) {
                    (Some(v), None) => {
                        self.store
                            .write(&link.target.0, &link.target.1, &link.target.2, v, link.is_set);
                        changed = true;
                    }
                    (None, Some(v)) => {
                        self.store
                            .write(&link.meta.0, &link.meta.1, &link.meta.2, v, link.is_set);
                        changed = true;
                    }
                    _ => {}
                }
            }
            if !changed {
                break;
            }
        }
    }

    /// Completion of one enactment context, evaluated over the completion
    /// formula with association-aware lookups.
    pub fn is_complete(&self, protocol: &str, key_context: &KeyTuple) -> bool {
        let Some(p) = self.specs.protocols.get(protocol) else {
            return false;
        };
        is_complete_in(&self.store, p, protocol, key_context)
    }

    /// Newly completed enactment contexts since the last call.
    pub fn completion_events(&mut self) -> Vec<(String, KeyTuple)> {
        let mut out = Vec::new();
        let protos: Vec<String> = self
            .canonical_plays()
            .iter()
            .map(|(p, _)| p.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        for proto in protos {
            let Some(p) = self.specs.protocols.get(&proto).cloned() else {
                continue;
            };
            let contexts: Vec<KeyTuple> = match p.key_model.global_keys.first() {
                Some(k0) => self
                    .store
                    .known_values(&proto, k0)
                    .into_iter()
                    .map(|v| KeyTuple::new(vec![(k0.clone(), v)]))
                    .collect(),
                None => vec![KeyTuple::empty()],
            };
            for ctx in contexts {
                if self.store.is_marked_complete(&proto, &ctx) {
                    continue;
                }
                if is_complete_in(&self.store, &p, &proto, &ctx) {
                    self.store.mark_complete(&proto, &ctx);
                    out.push((proto.clone(), ctx));
                }
            }
        }
        out
    }
}

/// Completion formula evaluation against a store.
pub fn is_complete_in(
    store: &EnactmentStore,
    p: &ResolvedProtocol,
    protocol: &str,
    ctx: &KeyTuple,
) -> bool {
    eval_formula(&p.completion, store, protocol, ctx)
}

fn eval_formula(f: &Formula, store: &EnactmentStore, protocol: &str, ctx: &KeyTuple) -> bool {
    match f {
        Formula::And(fs) => fs.iter().all(|f| eval_formula(f, store, protocol, ctx)),
        Formula::Or(fs) => fs.iter().any(|f| eval_formula(f, store, protocol, ctx)),
        Formula::Bound(name) => !store.query(protocol, name, &ctx.0).is_empty(),
    }
}

fn eval_relation(op: crate::lang::RelOp, value: &Value, target: &Value) -> bool {
    use crate::lang::RelOp;
    match op {
        RelOp::Eq => value.same(target),
        RelOp::Lt => value < target,
        RelOp::Gt => value > target,
        RelOp::ElementOf => match target {
            Value::List(items) => items.iter().any(|i| i.same(value)),
            _ => false,
        },
        RelOp::SubsetEq => match (value, target) {
            (Value::List(a), Value::List(b)) => a.iter().all(|x| b.iter().any(|y| y.same(x))),
            (v, Value::List(b)) => b.iter().any(|y| y.same(v)),
            _ => false,
        },
    }
}

/// Decode bytes through an adapter's own schema tables.
pub fn decode_for<'a>(
    specs: &'a Loaded,
    plays: &[(String, String)],
    bytes: &str,
) -> Result<(String, &'a ResolvedSchema, WireMessage), ReceiveError> {
    let wire = codec::decode_wire(bytes).map_err(|e| ReceiveError::Malformed(e.to_string()))?;
    for (proto, _) in plays {
        if let Some(p) = specs.protocols.get(proto) {
            if let Some(s) = p.schema(&wire.schema_id) {
                return Ok((proto.clone(), s, wire));
            }
        }
    }
    Err(ReceiveError::UnknownSchema(wire.schema_id))
}
