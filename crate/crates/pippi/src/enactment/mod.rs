//! The protocol adapter: per-agent local state, message emission and
//! reception under causality constraints, completion tracking, key
//! correlation, and dynamic role binding.

mod adapter;
mod store;

pub use adapter::{
    decode_for, is_complete_in, Adapter, AdapterConfig, EmitError, EnabledMessage, Reception,
    ReceiveError,
};
pub use store::{Direction, EnactmentStore, HistoryEvent, KeyTuple, RoleBinding, WriteOutcome};

#[cfg(test)]
mod tests;
