//! Machine-readable run reports emitted by the `tracecause` binary.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use tracecause::imaging::ExperimentSummary;
use tracecause::inference::CausalVerdict;
use tracecause::orbit::TypicalityReport;
use tracecause::simulation::SweepResult;

/// Bumped on any breaking change to the report layout.
pub const SCHEMA_VERSION: &str = "1.0.0";

/// The published JSON schema for [`RunReport`].
pub const SCHEMA: &str = include_str!("../schema/run_report.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Verdict(CausalVerdict),
    Sweep(SweepResult),
    Typicality(TypicalityReport),
    Experiment(ExperimentSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: String,
    pub command: String,
    pub parameters: Map<String, Value>,
    pub payload: Payload,
    /// Absent from reports written to files, which must be reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<u64>,
    pub seed: u64,
}

impl RunReport {
    pub fn new(command: &str, parameters: Map<String, Value>, payload: Payload, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            command: command.to_string(),
            parameters,
            payload,
            wall_time_ms: None,
            seed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports contain only finite numbers")
    }
}
