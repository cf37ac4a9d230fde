//! Run manifest written next to the artifacts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: String,
    pub seconds: f64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationCost {
    pub problem: String,
    pub n: usize,
    pub seconds_per_evaluation: f64,
    pub batch: usize,
    pub batch_increased: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub evaluation_costs: Vec<EvaluationCost>,
    /// Outputs that depend on wall-clock measurements.
    pub timing_dependent: Vec<PathBuf>,
    pub conventions: Vec<String>,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Self {
            config_hash,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            stages: Vec::new(),
            evaluation_costs: Vec::new(),
            timing_dependent: Vec::new(),
            conventions: Vec::new(),
            failed_stage: None,
            error: None,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}
