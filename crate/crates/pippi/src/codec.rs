//! Composition-independent wire encoding.
//!
//! A message travels as a canonical JSON array
//! `[schema_id, sender, recipient, [key values], [payload values]]` with no
//! insignificant whitespace. Parameter names never appear on the wire: the
//! payload is positional and each receiver reassociates values with its own
//! names through the schema.

use crate::lang::{Adornment, TypeName};
use crate::model::{PayloadSlot, ResolvedSchema, SlotConstraint};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("unknown schema `{0}`")]
    UnknownSchema(String),
    #[error("payload has {got} values, schema `{schema}` expects {expected}")]
    ArityMismatch {
        schema: String,
        expected: usize,
        got: usize,
    },
    #[error("malformed encoding: {0}")]
    MalformedEncoding(String),
}

/// A payload value. Identifiers cover keys, role addresses, and protocol
/// names; they share the string representation on the wire and are told
/// apart by the receiving schema's parameter types. Equality and ordering
/// treat an identifier and a string with the same text as the same value,
/// since the wire erases the distinction.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Dec(f64),
    Str(String),
    Id(String),
    List(Vec<Value>),
}

impl Value {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) | Value::Id(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Equality up to the Str/Id distinction, which the wire erases.
    pub fn same(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Str(a) | Value::Id(a), Value::Str(b) | Value::Id(b)) => a == b,
            (Value::List(a), Value::List(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same(y))
            }
            (a, b) => a == b,
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}

impl Eq for Value {}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        fn rank(v: &Value) -> u8 {
            match v {
                Value::Null => 0,
                Value::Bool(_) => 1,
                Value::Int(_) => 2,
                Value::Dec(_) => 3,
                Value::Str(_) | Value::Id(_) => 4,
                Value::List(_) => 5,
            }
        }
        match (self, other) {
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Dec(a), Value::Dec(b)) => a.total_cmp(b),
            (Value::Str(a) | Value::Id(a), Value::Str(b) | Value::Id(b)) => a.cmp(b),
            (Value::List(a), Value::List(b)) => a.cmp(b),
            _ => rank(self).cmp(&rank(other)),
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match serde_json::to_string(self) {
            Ok(s) => f.write_str(&s),
            Err(_) => f.write_str("<unprintable>"),
        }
    }
}

/// A message on the wire, addressed to one recipient. Multicast emissions
/// produce one wire message per recipient with identical key and payload
/// segments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMessage {
    pub schema_id: String,
    pub sender_address: String,
    pub recipient_address: String,
    pub key_values: Vec<Value>,
    pub payload: Vec<Value>,
}

impl WireMessage {
    /// Canonical bytes: the five-element JSON array.
    pub fn encode(&self) -> String {
        let mut out = Vec::new();
        let mut ser = serde_json::Serializer::new(&mut out);
        let mut seq = ser.serialize_seq(Some(5)).expect("serialize");
        seq.serialize_element(&self.schema_id).expect("serialize");
        seq.serialize_element(&self.sender_address).expect("serialize");
        seq.serialize_element(&self.recipient_address).expect("serialize");
        seq.serialize_element(&self.key_values).expect("serialize");
        seq.serialize_element(&self.payload).expect("serialize");
        seq.end().expect("serialize");
        String::from_utf8(out).expect("canonical JSON is UTF-8")
    }
}

/// Encode a named payload against a schema.
///
/// Every non-opt parameter must be supplied; opt parameters encode their
/// absence as an explicit null so positions are preserved.
pub fn encode(
    schema: &ResolvedSchema,
    sender_address: &str,
    recipient_address: &str,
    named_payload: &BTreeMap<String, Value>,
) -> Result<WireMessage, CodecError> {
    for name in named_payload.keys() {
        if !schema.payload.iter().any(|s| &s.name == name) {
            return Err(CodecError::UnknownParameter(name.clone()));
        }
    }
    let mut payload = Vec::with_capacity(schema.payload.len());
    for slot in &schema.payload {
        match named_payload.get(&slot.name) {
            Some(v) => payload.push(coerce(v.clone(), slot)),
            None if slot.opt || slot.adornment == Adornment::Nil => payload.push(Value::Null),
            None => return Err(CodecError::MissingParameter(slot.name.clone())),
        }
    }
    let key_values = schema
        .key_positions()
        .into_iter()
        .map(|i| payload[i].clone())
        .collect();
    Ok(WireMessage {
        schema_id: schema.id.clone(),
        sender_address: sender_address.to_string(),
        recipient_address: recipient_address.to_string(),
        key_values,
        payload,
    })
}

/// Decode wire bytes against a schema table, reassociating values with the
/// receiver's own parameter names by position.
pub fn decode<'a>(
    registry: &dyn Fn(&str) -> Option<&'a ResolvedSchema>,
    bytes: &str,
) -> Result<(&'a ResolvedSchema, WireMessage, BTreeMap<String, Value>), CodecError> {
    let wire = decode_wire(bytes)?;
    let schema = registry(&wire.schema_id)
        .ok_or_else(|| CodecError::UnknownSchema(wire.schema_id.clone()))?;
    let named = reassociate(schema, &wire)?;
    Ok((schema, wire, named))
}

/// Parse the five-segment array without schema knowledge.
pub fn decode_wire(bytes: &str) -> Result<WireMessage, CodecError> {
    let raw: serde_json::Value =
        serde_json::from_str(bytes).map_err(|e| CodecError::MalformedEncoding(e.to_string()))?;
    let arr = raw
        .as_array()
        .ok_or_else(|| CodecError::MalformedEncoding("expected a JSON array".into()))?;
    if arr.len() != 5 {
        return Err(CodecError::MalformedEncoding(format!(
            "expected 5 segments, found {}",
            arr.len()
        )));
    }
    let schema_id = arr[0]
        .as_str()
        .ok_or_else(|| CodecError::MalformedEncoding("schema id must be a string".into()))?;
    let sender = arr[1]
        .as_str()
        .ok_or_else(|| CodecError::MalformedEncoding("sender must be a string".into()))?;
    let recipient = arr[2]
        .as_str()
        .ok_or_else(|| CodecError::MalformedEncoding("recipient must be a string".into()))?;
    let keys = arr[3]
        .as_array()
        .ok_or_else(|| CodecError::MalformedEncoding("key segment must be an array".into()))?;
    let payload = arr[4]
        .as_array()
        .ok_or_else(|| CodecError::MalformedEncoding("payload segment must be an array".into()))?;
    Ok(WireMessage {
        schema_id: schema_id.to_string(),
        sender_address: sender.to_string(),
        recipient_address: recipient.to_string(),
        key_values: keys.iter().map(json_to_value).collect::<Result<_, _>>()?,
        payload: payload.iter().map(json_to_value).collect::<Result<_, _>>()?,
    })
}

/// Name the payload of a decoded message per the receiver's schema.
pub fn reassociate(
    schema: &ResolvedSchema,
    wire: &WireMessage,
) -> Result<BTreeMap<String, Value>, CodecError> {
    if wire.payload.len() != schema.payload.len() {
        return Err(CodecError::ArityMismatch {
            schema: schema.id.clone(),
            expected: schema.payload.len(),
            got: wire.payload.len(),
        });
    }
    let mut named = BTreeMap::new();
    for (slot, value) in schema.payload.iter().zip(&wire.payload) {
        named.insert(slot.name.clone(), coerce(value.clone(), slot));
    }
    Ok(named)
}

/// Apply the schema's type knowledge: identifier-typed positions decode as
/// identifiers even though the wire carries plain strings.
fn coerce(value: Value, slot: &PayloadSlot) -> Value {
    let id_typed = slot.key
        || slot
            .constraints
            .iter()
            .any(|c| matches!(c, SlotConstraint::Type(TypeName::Role | TypeName::Protocol)));
    match value {
        Value::Str(s) if id_typed => Value::Id(s),
        Value::Id(s) if !id_typed => Value::Id(s),
        Value::List(items) if slot.set => Value::List(
            items
                .into_iter()
                .map(|v| match v {
                    Value::Str(s) if id_typed => Value::Id(s),
                    other => other,
                })
                .collect(),
        ),
        other => other,
    }
}

fn json_to_value(v: &serde_json::Value) -> Result<Value, CodecError> {
    Ok(match v {
        serde_json::Value::Null => Value::Null,
        serde_json::Value::Bool(b) => Value::Bool(*b),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Value::Int(i)
            } else {
                Value::Dec(n.as_f64().ok_or_else(|| {
                    CodecError::MalformedEncoding(format!("unrepresentable number {n}"))
                })?)
            }
        }
        serde_json::Value::String(s) => Value::Str(s.clone()),
        serde_json::Value::Array(items) => {
            Value::List(items.iter().map(json_to_value).collect::<Result<_, _>>()?)
        }
        serde_json::Value::Object(_) => {
            return Err(CodecError::MalformedEncoding(
                "objects are not valid payload values".into(),
            ));
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{resolve, Loaded};

    fn load(files: &[&str]) -> Loaded {
        let docs: Vec<_> = files
            .iter()
            .map(|f| {
                let path = format!("{}/../../corpus/{f}", env!("CARGO_MANIFEST_DIR"));
                let text = std::fs::read_to_string(&path).unwrap();
                (f.to_string(), crate::lang::parse(&text).unwrap())
            })
            .collect();
        resolve(&docs)
    }

    fn named(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn transfer_payload_segment() {
        let loaded = load(&["transfer.bspl"]);
        let t = loaded.get("Transfer").unwrap();
        let schema = t.schema("Transfer").unwrap();
        let wire = encode(
            schema,
            "debtor",
            "bank",
            &named(&[
                ("ID", Value::Id("u-77".into())),
                ("amount", Value::Int(100)),
                ("C", Value::Str("Creditor".into())),
            ]),
        )
        .unwrap();
        assert_eq!(
            wire.encode(),
            r#"["Transfer","debtor","bank",["u-77"],["u-77",100,"Creditor"]]"#
        );
    }

    #[test]
    fn empty_payload_schema() {
        let loaded = resolve(&[(
            "<memory>".into(),
            crate::lang::parse("a -> b: Ping[]").unwrap(),
        )]);
        let p = loaded.get("Ping").unwrap();
        let wire = encode(&p.schemas[0], "x", "y", &BTreeMap::new()).unwrap();
        assert_eq!(wire.encode(), r#"["Ping","x","y",[],[]]"#);
    }

    #[test]
    fn composed_use_is_byte_identical() {
        let loaded = load(&["purchase_pay.bspl", "transfer.bspl"]);
        let bare = loaded.get("Transfer").unwrap().schema("Transfer").unwrap().clone();
        let composed = loaded.get("PurchasePay").unwrap().schema("Transfer").unwrap().clone();
        // The buyer supplies values under the composition's names mapped to
        // the schema's own names positionally; equal values, equal bytes.
        let values = named(&[
            ("ID", Value::Id("u-1".into())),
            ("amount", Value::Int(50)),
            ("C", Value::Str("Seller".into())),
        ]);
        let a = encode(&bare, "buyer", "bank", &values).unwrap().encode();
        let b = encode(&composed, "buyer", "bank", &values).unwrap().encode();
        assert_eq!(a, b);
        assert_eq!(a, r#"["Transfer","buyer","bank",["u-1"],["u-1",50,"Seller"]]"#);
    }

    #[test]
    fn receiver_names_by_position() {
        // The composition calls it `payment`; the bank decodes `amount`.
        let loaded = load(&["transfer.bspl"]);
        let t = loaded.get("Transfer").unwrap();
        let bytes = r#"["Transfer","buyer","bank",["u-9"],["u-9",100,"Creditor"]]"#;
        let lookup = |id: &str| t.schema(id);
        let (_, _, named) = decode(&lookup, bytes).unwrap();
        assert_eq!(named["amount"], Value::Int(100));
        assert_eq!(named["ID"], Value::Id("u-9".into()));
    }

    #[test]
    fn decode_encode_roundtrip() {
        let loaded = load(&["transfer.bspl"]);
        let t = loaded.get("Transfer").unwrap();
        let schema = t.schema("Transfer").unwrap();
        let values = named(&[
            ("ID", Value::Id("k-3".into())),
            ("amount", Value::Dec(12.5)),
            ("C", Value::Id("x".into())),
        ]);
        let wire = encode(schema, "a", "b", &values).unwrap();
        let lookup = |id: &str| t.schema(id);
        let (_, wire2, named2) = decode(&lookup, &wire.encode()).unwrap();
        assert_eq!(wire2.encode(), wire.encode());
        assert_eq!(named2, values);
    }

    #[test]
    fn truncation_is_malformed() {
        let loaded = load(&["transfer.bspl"]);
        let t = loaded.get("Transfer").unwrap();
        let schema = t.schema("Transfer").unwrap();
        let wire = encode(
            schema,
            "a",
            "b",
            &named(&[
                ("ID", Value::Id("k".into())),
                ("amount", Value::Int(1)),
                ("C", Value::Str("c".into())),
            ]),
        )
        .unwrap();
        let bytes = wire.encode();
        for cut in 1..bytes.len() {
            let chopped = &bytes[..bytes.len() - cut];
            let lookup = |id: &str| t.schema(id);
            match decode(&lookup, chopped) {
                Err(CodecError::MalformedEncoding(_)) => {}
                Err(CodecError::ArityMismatch { .. }) => {}
                Err(other) => panic!("unexpected error {other:?} for {chopped}"),
                Ok(_) => panic!("truncated bytes decoded: {chopped}"),
            }
        }
    }

    #[test]
    fn missing_and_unknown_parameters() {
        let loaded = load(&["transfer.bspl"]);
        let t = loaded.get("Transfer").unwrap();
        let schema = t.schema("Transfer").unwrap();
        assert!(matches!(
            encode(schema, "a", "b", &named(&[("ID", Value::Id("k".into()))])),
            Err(CodecError::MissingParameter(p)) if p == "amount" || p == "C"
        ));
        assert!(matches!(
            encode(schema, "a", "b", &named(&[("nope", Value::Int(1))])),
            Err(CodecError::UnknownParameter(p)) if p == "nope"
        ));
    }

    #[test]
    fn unknown_schema_is_reported() {
        let lookup = |_: &str| None;
        match decode(&lookup, r#"["Nope","a","b",[],[]]"#) {
            Err(CodecError::UnknownSchema(s)) => assert_eq!(s, "Nope"),
            other => panic!("expected UnknownSchema, got {other:?}"),
        }
    }
}
