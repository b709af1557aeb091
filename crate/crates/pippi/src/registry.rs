//! The MAS adapter: cross-enactment contact memory and candidate selection.
//!
//! Entries accumulate as agents are introduced; capability beliefs are taken
//! from the introductions without verification. Preconfigured contacts load
//! from a JSON object mapping capability labels to address arrays:
//!
//! ```json
//! {"Seller":["http://storeA.com/agent","http://storeB.com/agent"],
//!  "Bank": ["http://bank.com/agent"]}
//! ```

use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("unknown contact `{0}`")]
    UnknownContact(String),
    #[error("invalid contacts file: {0}")]
    InvalidContacts(String),
}

/// Capability label: a (protocol, role) pair joined as `protocol/role`, or a
/// free-form label from a contacts file.
pub fn capability_label(protocol: &str, role: &str) -> String {
    if role.is_empty() {
        protocol.to_string()
    } else {
        format!("{protocol}/{role}")
    }
}

#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct PlayedRecord {
    pub protocol: String,
    pub role: String,
    pub enactment_key: String,
    pub outcome: String,
}

#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct ContactEntry {
    pub address: String,
    pub capabilities: Vec<String>,
    pub played: Vec<PlayedRecord>,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct Registry {
    entries: BTreeMap<String, ContactEntry>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    /// Seed from a preconfigured contacts object (label -> addresses).
    pub fn from_contacts_json(json: &str) -> Result<Self, RegistryError> {
        let parsed: serde_json::Value =
            serde_json::from_str(json).map_err(|e| RegistryError::InvalidContacts(e.to_string()))?;
        let obj = parsed
            .as_object()
            .ok_or_else(|| RegistryError::InvalidContacts("expected a JSON object".into()))?;
        let mut reg = Registry::new();
        for (label, addrs) in obj {
            let arr = addrs.as_array().ok_or_else(|| {
                RegistryError::InvalidContacts(format!("`{label}` must map to an array"))
            })?;
            for a in arr {
                let addr = a.as_str().ok_or_else(|| {
                    RegistryError::InvalidContacts(format!("`{label}` contains a non-string address"))
                })?;
                reg.observe_label(addr, label);
            }
        }
        Ok(reg)
    }

    /// Record that an agent was introduced with a capability; idempotent.
    pub fn observe_introduction(&mut self, address: &str, protocol: &str, role: &str) {
        let label = capability_label(protocol, role);
        self.observe_label(address, &label);
    }

    pub fn observe_label(&mut self, address: &str, label: &str) {
        let entry = self.entries.entry(address.to_string()).or_insert_with(|| ContactEntry {
            address: address.to_string(),
            ..ContactEntry::default()
        });
        if !label.is_empty() && !entry.capabilities.iter().any(|c| c == label) {
            entry.capabilities.push(label.to_string());
        }
    }

    /// Record the address itself with no capability (envelope contact).
    pub fn observe_address(&mut self, address: &str) {
        self.observe_label(address, "");
    }

    /// Candidates believed to support a capability, ordered by successful
    /// enactments (descending) then address.
    pub fn candidates(&self, protocol: &str, role: &str, exclude: &[String]) -> Vec<String> {
        let label = capability_label(protocol, role);
        self.candidates_for_label(&label, exclude)
    }

    pub fn candidates_for_label(&self, label: &str, exclude: &[String]) -> Vec<String> {
        let mut found: Vec<(&ContactEntry, usize)> = self
            .entries
            .values()
            .filter(|e| e.capabilities.iter().any(|c| c == label))
            .filter(|e| !exclude.contains(&e.address))
            .map(|e| {
                let successes = e
                    .played
                    .iter()
                    .filter(|r| r.outcome == "COMPLETE")
                    .count();
                (e, successes)
            })
            .collect();
        found.sort_by(|(a, sa), (b, sb)| sb.cmp(sa).then(a.address.cmp(&b.address)));
        found.into_iter().map(|(e, _)| e.address.clone()).collect()
    }

    /// Append an interaction outcome for a known contact.
    pub fn record_outcome(
        &mut self,
        address: &str,
        protocol: &str,
        role: &str,
        enactment_key: &str,
        outcome: &str,
    ) -> Result<(), RegistryError> {
        let entry = self
            .entries
            .get_mut(address)
            .ok_or_else(|| RegistryError::UnknownContact(address.to_string()))?;
        entry.played.push(PlayedRecord {
            protocol: protocol.to_string(),
            role: role.to_string(),
            enactment_key: enactment_key.to_string(),
            outcome: outcome.to_string(),
        });
        Ok(())
    }

    pub fn set_attribute(&mut self, address: &str, key: &str, value: &str) {
        if let Some(e) = self.entries.get_mut(address) {
            e.attributes.insert(key.to_string(), value.to_string());
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = &ContactEntry> {
        self.entries.values()
    }

    pub fn get(&self, address: &str) -> Option<&ContactEntry> {
        self.entries.get(address)
    }

    pub fn addresses(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn introductions_are_idempotent() {
        let mut reg = Registry::new();
        reg.observe_introduction("a1", "Discovery", "R");
        reg.observe_introduction("a1", "Discovery", "R");
        let e = reg.get("a1").unwrap();
        assert_eq!(e.capabilities, vec!["Discovery/R"]);
    }

    #[test]
    fn contacts_file_round() {
        let json = r#"{"Seller":["http://storeA.com/agent","http://storeB.com/agent"],
 "Bank": ["http://bank.com/agent"]}"#;
        let reg = Registry::from_contacts_json(json).unwrap();
        assert_eq!(
            reg.candidates_for_label("Seller", &[]),
            vec!["http://storeA.com/agent", "http://storeB.com/agent"]
        );
        assert_eq!(reg.candidates_for_label("Bank", &[]), vec!["http://bank.com/agent"]);
        assert!(reg.candidates_for_label("Nope", &[]).is_empty());
    }

    #[test]
    fn malformed_contacts_rejected() {
        assert!(Registry::from_contacts_json("[]").is_err());
        assert!(Registry::from_contacts_json(r#"{"Seller": "oops"}"#).is_err());
        assert!(Registry::from_contacts_json(r#"{"Seller": [1]}"#).is_err());
    }

    #[test]
    fn candidate_ordering_matches_sort_oracle() {
        let mut reg = Registry::new();
        for addr in ["c", "a", "b"] {
            reg.observe_label(addr, "Sell");
        }
        reg.record_outcome("b", "P", "S", "k1", "COMPLETE").unwrap();
        reg.record_outcome("b", "P", "S", "k2", "COMPLETE").unwrap();
        reg.record_outcome("c", "P", "S", "k3", "COMPLETE").unwrap();
        reg.record_outcome("a", "P", "S", "k4", "FAILED").unwrap();
        // Oracle: sort (address, successes) by successes desc then address.
        let mut oracle = vec![("a", 0usize), ("b", 2), ("c", 1)];
        oracle.sort_by(|(aa, sa), (ab, sb)| sb.cmp(sa).then(aa.cmp(ab)));
        let expect: Vec<String> = oracle.into_iter().map(|(a, _)| a.to_string()).collect();
        assert_eq!(reg.candidates_for_label("Sell", &[]), expect);
    }

    #[test]
    fn exclusion_filters_candidates() {
        let mut reg = Registry::new();
        reg.observe_label("a", "X");
        reg.observe_label("b", "X");
        assert_eq!(reg.candidates_for_label("X", &["a".to_string()]), vec!["b"]);
    }

    #[test]
    fn unknown_contact_outcome_is_an_error() {
        let mut reg = Registry::new();
        assert_eq!(
            reg.record_outcome("ghost", "P", "R", "k", "COMPLETE"),
            Err(RegistryError::UnknownContact("ghost".into()))
        );
    }

    #[test]
    fn monotone_memory() {
        let mut reg = Registry::new();
        reg.observe_label("a", "X");
        reg.record_outcome("a", "P", "R", "k", "COMPLETE").unwrap();
        reg.observe_label("a", "Y");
        let e = reg.get("a").unwrap();
        assert_eq!(e.capabilities, vec!["X", "Y"]);
        assert_eq!(e.played.len(), 1);
    }
}
