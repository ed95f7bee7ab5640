//! Machine-readable run reports.

use std::collections::BTreeMap;

use mfc_core::sim::SimResult;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ScenarioConfig;

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex SHA-256 of the canonical TOML form of `config`.
pub fn config_hash(config: &ScenarioConfig) -> String {
    format!("{:x}", Sha256::digest(config.to_toml().as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: String,
    pub epsilon: f64,
    pub samples: usize,
    pub sup_abs_u: f64,
    /// Largest `|u|` up to the end of the peak window.
    pub initial_peak: f64,
    pub tail_tracking_error: f64,
    pub tail_window: [f64; 2],
    pub eta_sup: f64,
    pub settled: bool,
    pub guard_tripped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor_flags: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
}

impl RunRecord {
    pub fn from_result(result: &SimResult, epsilon: f64, tail_start: f64, peak_window: f64) -> Self {
        let end = result.times.last().copied().unwrap_or(0.0);
        let tail = result.max_tracking_error_in(tail_start, end);
        let span = end - tail_start;
        let before = result.max_tracking_error_in((tail_start - span).max(0.0), tail_start);
        Self {
            mode: result.mode.name().to_owned(),
            epsilon,
            samples: result.len(),
            sup_abs_u: result.u.iter().fold(0.0, |m, u| m.max(u.abs())),
            initial_peak: result.peak_input_in(0.0, peak_window),
            tail_tracking_error: tail,
            tail_window: [tail_start, end],
            eta_sup: result.eta.iter().map(|e| mfc_core::plant::norm2(e)).fold(0.0, f64::max),
            settled: tail <= before,
            guard_tripped: result.aborted.is_some(),
            abort_time: result.aborted.as_ref().map(|a| a.time),
            monitor_flags: result.monitor.as_ref().map(|m| m.flagged_samples),
            csv: None,
        }
    }
}

/// A yes/no statement together with the numbers it was decided from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub holds: bool,
    pub inputs: BTreeMap<String, f64>,
}

impl Verdict {
    pub fn new(name: impl Into<String>, holds: bool, inputs: &[(&str, f64)]) -> Self {
        Self {
            name: name.into(),
            holds,
            inputs: inputs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    pub fn line(&self) -> String {
        let values: Vec<String> = self.inputs.iter().map(|(k, v)| format!("{k}={v:.6e}")).collect();
        format!("{}: {} ({})", self.name, self.holds, values.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub scenario: String,
    pub config_sha256: String,
    pub runs: Vec<RunRecord>,
    pub verdicts: Vec<Verdict>,
    #[serde(default)]
    pub errors: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, config: &ScenarioConfig) -> Self {
        Self {
            tool: TOOL_NAME.to_owned(),
            version: TOOL_VERSION.to_owned(),
            command: command.to_owned(),
            scenario: config.name.clone(),
            config_sha256: config_hash(config),
            runs: Vec::new(),
            verdicts: Vec::new(),
            errors: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }
}
