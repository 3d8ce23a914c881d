use std::path::{Path, PathBuf};

use laso::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// Environment variable consulted when neither a flag nor the config file
/// sets a seed.
pub const SEED_ENV: &str = "LASO_SEED";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    /// Defaults to `vocab.txt` next to the training manifest.
    pub vocab: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

/// Everything a training run needs, read from one JSON object.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: Paths,
    /// Overrides `train.seed` and seeds model initialization.
    pub seed: Option<u64>,
}

impl RunConfig {
    /// Desk-scale starting point: the tiny architecture.
    pub fn tiny() -> Self {
        RunConfig {
            model: ModelConfig::tiny(),
            ..RunConfig::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("reading config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())))
    }

    /// Flag, then config file, then `LASO_SEED`, then 0.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<u64, UsageError> {
        let seed = match flag.or(self.seed) {
            Some(s) => s,
            None => env_seed()?.unwrap_or(0),
        };
        self.seed = Some(seed);
        self.train.seed = seed;
        Ok(seed)
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        self.model.validate().map_err(|e| field_error("model", e))?;
        self.train.validate().map_err(|e| field_error("train", e))
    }
}

fn field_error(section: &str, e: laso::Error) -> UsageError {
    match e {
        laso::Error::Config { field, reason } => UsageError(format!("{section}.{field}: {reason}")),
        other => UsageError(format!("{section}: {other}")),
    }
}

pub fn env_seed() -> Result<Option<u64>, UsageError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| UsageError(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Flag, then `LASO_SEED`, then 0.
pub fn seed_or_env(flag: Option<u64>) -> Result<u64, UsageError> {
    Ok(match flag {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    })
}
