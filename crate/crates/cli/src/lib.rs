//! Scenario runner for model-following control experiments.
//!
//! Scenarios are TOML files (or named presets) describing a plant, a
//! controller, a reference and simulation settings. The commands in
//! [`commands`] turn them into CSV trajectories and JSON reports.

pub mod commands;
pub mod config;
pub mod csv;
pub mod presets;
pub mod report;

pub use commands::{cmd_compare, cmd_design, cmd_run, cmd_sweep, Outcome, Overrides};
pub use config::{ConfigError, Resolved, ScenarioConfig};
pub use report::{RunRecord, RunReport, Verdict};
