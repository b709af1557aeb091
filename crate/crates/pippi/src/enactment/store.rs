//! Per-agent relational state: immutable parameter bindings indexed by key
//! tuples, message history, and the key-association table.

use crate::codec::{Value, WireMessage};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

/// Key context of a binding: (key parameter, value) pairs sorted by name.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct KeyTuple(pub Vec<(String, Value)>);

impl KeyTuple {
    pub fn new(mut pairs: Vec<(String, Value)>) -> Self {
        pairs.sort();
        pairs.dedup();
        KeyTuple(pairs)
    }

    pub fn empty() -> Self {
        KeyTuple(Vec::new())
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.0.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::fmt::Display for KeyTuple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_empty() {
            return f.write_str("-");
        }
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|(k, v)| {
                let vs = match v {
                    Value::Str(s) | Value::Id(s) => s.clone(),
                    other => other.to_string(),
                };
                format!("{k}={vs}")
            })
            .collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Direction {
    Sent,
    Received,
}

#[derive(Clone, Debug, Serialize)]
pub struct HistoryEvent {
    pub seq: u64,
    pub direction: Direction,
    pub protocol: String,
    pub wire: WireMessage,
}

/// An agent's view of one (role parameter, enactment) binding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RoleBinding {
    pub keys: KeyTuple,
    pub role: String,
    pub address: String,
}

/// Relational store. Bindings are write-once per (parameter, key tuple);
/// set parameters accumulate distinct elements instead.
#[derive(Clone, Debug, Default, Serialize)]
pub struct EnactmentStore {
    bindings: BTreeMap<(String, String, KeyTuple), Value>,
    associations: BTreeMap<(String, String, Value), BTreeSet<(String, Value)>>,
    pub history: Vec<HistoryEvent>,
    completed: BTreeSet<(String, KeyTuple)>,
}

pub enum WriteOutcome {
    New,
    Duplicate,
    Conflict { old: Value },
    Extended,
}

impl EnactmentStore {
    pub fn new() -> Self {
        EnactmentStore::default()
    }

    /// Exact lookup, then association-joined lookups across invertible keys.
    pub fn lookup(&self, protocol: &str, param: &str, keys: &KeyTuple) -> Option<&Value> {
        let exact = (protocol.to_string(), param.to_string(), keys.clone());
        if let Some(v) = self.bindings.get(&exact) {
            return Some(v);
        }
        self.query(protocol, param, &keys.0).into_iter().next().map(|(_, v)| v)
    }

    /// All bindings of `param` whose key tuples are compatible with the
    /// partial key, following associations across invertible keys.
    pub fn query<'a>(
        &'a self,
        protocol: &str,
        param: &str,
        partial: &[(String, Value)],
    ) -> Vec<(&'a KeyTuple, &'a Value)> {
        let lo = (protocol.to_string(), param.to_string(), KeyTuple::empty());
        self.bindings
            .range(lo..)
            .take_while(|((p, n, _), _)| p == protocol && n == param)
            .filter(|((_, _, keys), _)| self.compatible(protocol, keys, partial))
            .map(|((_, _, keys), v)| (keys, v))
            .collect()
    }

    fn compatible(&self, protocol: &str, keys: &KeyTuple, partial: &[(String, Value)]) -> bool {
        // Keys present on both sides must agree.
        for (bk, bv) in &keys.0 {
            if let Some((_, pv)) = partial.iter().find(|(pk, _)| pk == bk) {
                if !bv.same(pv) {
                    return false;
                }
            }
        }
        // An outer-scope binding is visible in any refinement of its context.
        let covered = keys
            .0
            .iter()
            .all(|(bk, _)| partial.iter().any(|(pk, _)| pk == bk));
        partial.iter().all(|(pk, pv)| {
            if keys.get(pk).is_some() {
                return true; // agreement checked above
            }
            if covered {
                return true;
            }
            // Otherwise an invertible association must link the asked-for key
            // value to one of the tuple's entries.
            match self
                .associations
                .get(&(protocol.to_string(), pk.clone(), pv.clone()))
            {
                Some(linked) => keys
                    .0
                    .iter()
                    .any(|(bk, bv)| linked.contains(&(bk.clone(), bv.clone()))),
                None => false,
            }
        })
    }

    /// Write one binding. Set parameters merge distinct elements; everything
    /// else is immutable per (parameter, key tuple).
    pub fn write(
        &mut self,
        protocol: &str,
        param: &str,
        keys: &KeyTuple,
        value: Value,
        is_set: bool,
    ) -> WriteOutcome {
        let key = (protocol.to_string(), param.to_string(), keys.clone());
        match self.bindings.get_mut(&key) {
            None => {
                self.bindings.insert(key, value);
                WriteOutcome::New
            }
            Some(existing) if is_set => {
                let mut items = match existing.clone() {
                    Value::List(v) => v,
                    other => vec![other],
                };
                let new_items = match value {
                    Value::List(v) => v,
                    other => vec![other],
                };
                let mut grew = false;
                for item in new_items {
                    if !items.iter().any(|x| x.same(&item)) {
                        items.push(item);
                        grew = true;
                    }
                }
                *existing = Value::List(items);
                if grew {
                    WriteOutcome::Extended
                } else {
                    WriteOutcome::Duplicate
                }
            }
            Some(existing) if existing.same(&value) => WriteOutcome::Duplicate,
            Some(existing) => WriteOutcome::Conflict {
                old: existing.clone(),
            },
        }
    }

    pub fn peek(&self, protocol: &str, param: &str, keys: &KeyTuple) -> Option<&Value> {
        self.bindings
            .get(&(protocol.to_string(), param.to_string(), keys.clone()))
    }

    pub fn associate(&mut self, protocol: &str, a: (String, Value), b: (String, Value)) {
        self.associations
            .entry((protocol.to_string(), a.0.clone(), a.1.clone()))
            .or_default()
            .insert(b.clone());
        self.associations
            .entry((protocol.to_string(), b.0, b.1))
            .or_default()
            .insert(a);
    }

    pub fn associations_of(&self, protocol: &str, key: &str, value: &Value) -> Vec<(String, Value)> {
        self.associations
            .get(&(protocol.to_string(), key.to_string(), value.clone()))
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default()
    }

    /// Distinct known values bound for one parameter (used to enumerate key
    /// contexts).
    pub fn known_values(&self, protocol: &str, param: &str) -> Vec<Value> {
        let mut out: BTreeSet<Value> = BTreeSet::new();
        for ((p, n, keys), v) in &self.bindings {
            if p != protocol {
                continue;
            }
            if n == param {
                out.insert(v.clone());
            }
            if let Some(kv) = keys.get(param) {
                out.insert(kv.clone());
            }
        }
        out.into_iter().collect()
    }

    pub fn role_bindings(&self, protocol: &str, roles: &BTreeSet<String>) -> Vec<RoleBinding> {
        let mut out = Vec::new();
        for ((p, n, keys), v) in &self.bindings {
            if p == protocol && roles.contains(n) {
                if let Some(addr) = v.as_str() {
                    out.push(RoleBinding {
                        keys: keys.clone(),
                        role: n.clone(),
                        address: addr.to_string(),
                    });
                }
            }
        }
        out
    }

    pub fn bindings(&self) -> &BTreeMap<(String, String, KeyTuple), Value> {
        &self.bindings
    }

    pub fn mark_complete(&mut self, protocol: &str, ctx: &KeyTuple) -> bool {
        self.completed.insert((protocol.to_string(), ctx.clone()))
    }

    pub fn is_marked_complete(&self, protocol: &str, ctx: &KeyTuple) -> bool {
        self.completed.contains(&(protocol.to_string(), ctx.clone()))
    }

    /// Store equality for independence checks: bindings and associations,
    /// ignoring history sequence numbers.
    pub fn same_state(&self, other: &EnactmentStore) -> bool {
        self.bindings == other.bindings && self.associations == other.associations
    }
}
