use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Diagnostics, GenerationResult, TaskSpec};
use crate::dataset::{sidecar_path, write_trajectories_csv, CsvStamp};
use crate::error::{Error, Result};

/// JSON sidecar written next to a generated trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    pub spec: TaskSpec,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Writes the workspace trajectory as CSV and its record as `<csv>.json`.
pub fn export_result(result: &GenerationResult, path: &Path, stamp: Option<&CsvStamp>) -> Result<GenerationRecord> {
    write_trajectories_csv(path, &[(result.spec.task_id, &result.trajectory)], stamp)?;
    let record = GenerationRecord {
        seed: stamp.map(|s| s.seed),
        config_hash: stamp.map(|s| s.config_hash.clone()),
        spec: result.spec.clone(),
        z: result.latent.clone(),
        s: result.scale.s.clone(),
        diagnostics: result.diagnostics.clone(),
    };
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&record)?;
    fs::write(&side, json + "\n").map_err(|e| Error::io(format!("writing {}", side.display()), e))?;
    Ok(record)
}
