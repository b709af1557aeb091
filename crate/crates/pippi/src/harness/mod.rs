//! Deterministic asynchronous simulation substrate and scenario runner.

mod network;
mod scenario;
mod sim;
mod trace;

pub use network::{DeliveryPolicy, Envelope, SimNetwork};
pub use scenario::{AgentSpec, Assertion, Condition, Rule, Scenario, ScenarioError, SeedBinding};
pub use sim::{run_scenario, Agent, AssertionResult, Report, RunStatus, Simulation};
pub use trace::{format_key_tuple, replay, ReplayError, TraceEvent, TraceKind};
