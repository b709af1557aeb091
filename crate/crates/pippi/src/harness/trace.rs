//! Trace lines and trace replay.
//!
//! One line per event: `seq agent KIND subject key-tuple summary`. SENT
//! summaries carry the canonical wire bytes; RECV and QUAR summaries carry
//! the originating SENT sequence number followed by the bytes, which lets a
//! replay cross-check that payloads were not altered in transit.

use crate::codec::{self, WireMessage};
use crate::enactment::{Adapter, AdapterConfig, EnactmentStore, KeyTuple};
use crate::model::Loaded;
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceKind {
    Sent,
    Recv,
    Quar,
    Complete,
}

impl TraceKind {
    fn tag(self) -> &'static str {
        match self {
            TraceKind::Sent => "SENT",
            TraceKind::Recv => "RECV",
            TraceKind::Quar => "QUAR",
            TraceKind::Complete => "COMPLETE",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TraceEvent {
    pub seq: u64,
    pub agent: String,
    pub kind: TraceKind,
    pub subject: String,
    pub keys: String,
    pub summary: String,
}

impl std::fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {}",
            self.seq,
            self.agent,
            self.kind.tag(),
            self.subject,
            self.keys,
            self.summary
        )
    }
}

/// Key-tuple column for a wire message, named per any loaded view.
pub fn format_key_tuple(specs: &Loaded, wire: &WireMessage) -> String {
    for (_, schema) in specs.find_schema(&wire.schema_id) {
        let names: Vec<&str> = schema
            .key_positions()
            .into_iter()
            .map(|i| schema.payload[i].name.as_str())
            .collect();
        if names.len() == wire.key_values.len() {
            let parts: Vec<String> = names
                .iter()
                .zip(&wire.key_values)
                .map(|(n, v)| {
                    let vs = match v {
                        codec::Value::Str(s) | codec::Value::Id(s) => s.clone(),
                        other => other.to_string(),
                    };
                    format!("{n}={vs}")
                })
                .collect();
            if parts.is_empty() {
                return "-".into();
            }
            return parts.join(",");
        }
    }
    "-".into()
}

pub fn tuple_matches(binding: &KeyTuple, ctx: &KeyTuple) -> bool {
    ctx.0.iter().all(|(k, v)| binding.get(k).map(|b| b.same(v)).unwrap_or(true))
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("corrupt trace at line {line}: {reason}")]
    CorruptTrace { line: usize, reason: String },
}

fn corrupt(line: usize, reason: impl Into<String>) -> ReplayError {
    ReplayError::CorruptTrace {
        line,
        reason: reason.into(),
    }
}

/// Reconstruct every agent's store from a trace. The result of replaying a
/// run equals the run's own final stores; any tampered line surfaces as a
/// corruption error.
pub fn replay(
    lines: &[String],
    specs: &Arc<Loaded>,
    roster: &[(String, Vec<(String, String)>)],
) -> Result<BTreeMap<String, EnactmentStore>, ReplayError> {
    let mut adapters: BTreeMap<String, Adapter> = roster
        .iter()
        .map(|(address, plays)| {
            (
                address.clone(),
                Adapter::new(
                    AdapterConfig {
                        address: address.clone(),
                        plays: plays.clone(),
                        handlers: BTreeMap::new(),
                        seed: 0,
                    },
                    Arc::clone(specs),
                    None,
                ),
            )
        })
        .collect();
    let mut sent_bytes: BTreeMap<u64, String> = BTreeMap::new();

    for (lineno, line) in lines.iter().enumerate() {
        let n = lineno + 1;
        let mut parts = line.splitn(6, ' ');
        let seq: u64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt(n, "missing sequence number"))?;
        let agent = parts.next().ok_or_else(|| corrupt(n, "missing agent"))?.to_string();
        let kind = parts.next().ok_or_else(|| corrupt(n, "missing event kind"))?;
        let _subject = parts.next().ok_or_else(|| corrupt(n, "missing subject"))?;
        let _keys = parts.next().ok_or_else(|| corrupt(n, "missing key tuple"))?;
        let summary = parts.next().unwrap_or("");
        match kind {
            "SENT" => {
                let wire = codec::decode_wire(summary)
                    .map_err(|e| corrupt(n, format!("bad wire bytes: {e}")))?;
                sent_bytes.insert(seq, summary.to_string());
                let adapter = adapters
                    .get_mut(&agent)
                    .ok_or_else(|| corrupt(n, format!("unknown agent {agent}")))?;
                adapter
                    .replay_sent(&wire)
                    .map_err(|e| corrupt(n, format!("emission does not integrate: {e}")))?;
            }
            "RECV" | "QUAR" => {
                let (origin, rest) = summary
                    .split_once(' ')
                    .ok_or_else(|| corrupt(n, "missing origin sequence"))?;
                let origin: u64 = origin
                    .parse()
                    .map_err(|_| corrupt(n, "bad origin sequence"))?;
                let bytes = rest
                    .split(" (")
                    .next()
                    .unwrap_or(rest);
                let original = sent_bytes
                    .get(&origin)
                    .ok_or_else(|| corrupt(n, format!("origin {origin} was never sent")))?;
                if original != bytes {
                    return Err(corrupt(
                        n,
                        format!("payload differs from sent message {origin}"),
                    ));
                }
                if kind == "RECV" {
                    let wire = codec::decode_wire(bytes)
                        .map_err(|e| corrupt(n, format!("bad wire bytes: {e}")))?;
                    let adapter = adapters
                        .get_mut(&agent)
                        .ok_or_else(|| corrupt(n, format!("unknown agent {agent}")))?;
                    adapter
                        .receive(&wire)
                        .map_err(|e| corrupt(n, format!("reception conflicts: {e}")))?;
                }
            }
            "COMPLETE" => {}
            other => return Err(corrupt(n, format!("unknown event kind {other}"))),
        }
    }
    Ok(adapters
        .into_iter()
        .map(|(addr, a)| (addr, a.store))
        .collect())
}
