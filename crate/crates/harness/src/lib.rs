//! Deterministic scenario runner for the optimistic verification protocol.

pub mod artifacts;
pub mod config;
pub mod replay;
pub mod run;

pub use config::{Adversary, ConfigError, ScenarioConfig};
pub use replay::{replay_verify, ReplayError, ReplaySummary};
pub use run::{run_scenario, RunError, RunMetrics, ScenarioRun};
