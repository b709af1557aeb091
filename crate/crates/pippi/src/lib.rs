//! Toolkit for information protocols: the Pippi protocol language, semantic
//! resolution, a per-agent enactment engine, metaprotocol generation, contact
//! management, and a deterministic simulation harness.

pub mod codec;
pub mod diagnostics;
pub mod enactment;
pub mod harness;
pub mod lang;
pub mod metagen;
pub mod model;
pub mod registry;
