use thiserror::Error;

use crate::error::TensorError;
use crate::network::{CheckpointError, ConfigError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("epoch {epoch} is past max_epochs {max_epochs}")]
    EpochOutOfRange { epoch: usize, max_epochs: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("network configuration: {0}")]
    Network(#[from] ConfigError),
    #[error("cannot split {cases} cases into {folds} folds")]
    TooManyFolds { folds: usize, cases: usize },
    #[error("fold {fold} out of range for {folds} folds")]
    FoldOutOfRange { fold: usize, folds: usize },
    #[error("mask label {label} outside 0..{n_classes}")]
    Label { label: u8, n_classes: usize },
    #[error("non-finite loss at epoch {epoch}, iteration {iteration}: {detail}")]
    NonFiniteLoss { epoch: usize, iteration: usize, detail: String },
    #[error("resample: {0}")]
    Resample(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
