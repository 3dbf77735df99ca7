//! Experiment files: a training configuration plus where to write results.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trimodal_core::trainer::{preset_config, TrainConfig};
use trimodal_core::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Relative output directories are resolved against this variable when set.
pub const OUT_ROOT_VAR: &str = "TRIMODAL_OUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Preset the run is based on. Ignored for training when `train` is
    /// given, but still recorded in the summary.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub seed_group: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

impl ExperimentConfig {
    pub fn from_preset(name: &str, seed_group: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            preset: Some(name.to_string()),
            seed_group,
            output_dir: None,
            train: None,
        }
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "{}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
                origin.display(),
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// The training configuration this experiment runs.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let cfg = match (&self.train, &self.preset) {
            (Some(t), _) => t.clone(),
            (None, Some(p)) => preset_config(p, self.seed_group)?,
            (None, None) => {
                return Err(Error::Config(
                    "experiment needs either a preset or a train section".into(),
                ))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn label(&self) -> &str {
        self.preset.as_deref().unwrap_or("custom")
    }
}

/// Applies the output-root override to a relative directory.
pub fn resolve_out(dir: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_VAR) {
        Some(root) if dir.is_relative() => Path::new(&root).join(dir),
        _ => dir.to_path_buf(),
    }
}
