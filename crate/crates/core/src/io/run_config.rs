use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::synth::SynthConfig;
use crate::network::{NetworkConfig, Variant};
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum RunConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    /// Dataset manifest used by `train`, `predict` and `evaluate`.
    pub manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for DataPaths {
    fn default() -> Self {
        Self { manifest: None, output_dir: PathBuf::from("runs") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    /// Fold trained for every variant.
    pub fold: usize,
    pub variants: Vec<Variant>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { fold: 0, variants: Variant::ALL.to_vec() }
    }
}

/// Everything a run needs. Omitted sections take full-scale defaults;
/// unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub data: DataPaths,
    pub compare: CompareConfig,
}

impl RunConfig {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn desk() -> Self {
        Self { network: NetworkConfig::desk(), train: TrainConfig::desk(), ..Self::default() }
    }

    pub fn from_json(text: &str) -> Result<Self, RunConfigError> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, RunConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| RunConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<(), RunConfigError> {
        let inv = |e: &dyn std::fmt::Display| RunConfigError::Invalid(e.to_string());
        self.network.validate().map_err(|e| inv(&e))?;
        self.train.validate().map_err(|e| inv(&e))?;
        self.network.check_patch(self.train.patch_size).map_err(|e| inv(&e))?;
        if self.compare.fold >= self.train.folds {
            return Err(RunConfigError::Invalid(format!("compare.fold {} >= folds {}", self.compare.fold, self.train.folds)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_full_scale_defaults() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c.train.batch_size, 4);
        assert_eq!(c.train.patch_size, [48, 192, 192]);
        assert_eq!(c.train.initial_lr, 0.01);
        assert_eq!(c.train.poly_exponent, 0.9);
        assert_eq!(c.train.max_epochs, 1000);
        assert_eq!(c.train.folds, 5);
        assert_eq!(c.network.stages.len(), 6);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"train": {"learning_rate": 0.1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"extra": 1}"#).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let c = RunConfig::desk();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn indivisible_patch_rejected() {
        let mut c = RunConfig::desk();
        c.train.patch_size = [16, 60, 64];
        assert!(c.validate().is_err());
    }
}
