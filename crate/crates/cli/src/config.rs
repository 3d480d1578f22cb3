use std::fs;
use std::path::{Path, PathBuf};

use dmpvae::cvae::TrainConfig;
use dmpvae::dataset::{config_hash, AugmentConfig, CsvStamp};
use dmpvae::dmp::DmpConfig;
use dmpvae::generator::FinetuneConfig;
use dmpvae::handwriting::HandwritingConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub episodes: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { episodes: 20 }
    }
}

/// Everything a command may read. The top-level `seed` drives every random
/// stream: it overwrites the augmentation and training seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub tasks: Vec<u32>,
    pub dmp: DmpConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    /// Also used by the handwriting benchmark.
    pub finetune: FinetuneConfig,
    pub handwriting: HandwritingConfig,
    pub sim: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            dataset: None,
            checkpoint: None,
            tasks: vec![1, 2, 3, 7],
            dmp: DmpConfig::default(),
            augment: AugmentConfig::default(),
            train: TrainConfig::default(),
            finetune: FinetuneConfig::default(),
            handwriting: HandwritingConfig::default(),
            sim: SimConfig::default(),
        }
    }
}

/// Recursively overlays `top` onto `base`; objects merge key by key, any
/// other value replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults, then the config file, then `overrides` (already shaped like the
/// config document).
pub fn resolve(file: Option<&Path>, overrides: Value) -> Result<RunConfig, CliError> {
    let mut doc = serde_json::to_value(RunConfig::default()).expect("default config serializes");
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("reading {}: {e}", path.display())))?;
        let parsed: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if !parsed.is_object() {
            return Err(CliError::Usage(format!("{}: expected a JSON object", path.display())));
        }
        merge(&mut doc, parsed);
    }
    merge(&mut doc, overrides);
    let mut cfg: RunConfig = serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("config: {e}")))?;
    cfg.augment.rng_seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    cfg.handwriting.finetune = cfg.finetune.clone();
    cfg.handwriting.tasks.retain(|t| cfg.tasks.contains(t));
    Ok(cfg)
}

impl RunConfig {
    /// Hash of the experiment settings; file locations are left out so the
    /// same run written elsewhere carries the same hash.
    pub fn hash(&self) -> String {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut doc {
            for key in ["out", "dataset", "checkpoint"] {
                map.remove(key);
            }
        }
        config_hash(&doc).expect("config serializes")
    }

    pub fn stamp(&self) -> CsvStamp {
        CsvStamp {
            seed: self.seed,
            config_hash: self.hash(),
        }
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.out.join("dataset.csv"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("model.ckpt"))
    }
}
