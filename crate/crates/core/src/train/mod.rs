pub mod baseline;
mod error;
pub mod folds;
pub mod inference;
pub mod loss;
pub mod preprocess;
pub mod sampling;
pub mod schedule;
pub mod trainer;

pub use baseline::{fit_threshold, threshold_mask};
pub use error::TrainError;
pub use folds::{kfold_split, Fold, FoldPlan};
pub use inference::{ensemble_predict, window_starts};
pub use loss::{dice_ce_level, dice_ce_loss, dice_ce_parts, DiceCeParts};
pub use preprocess::{resample, zscore_normalize, Interp};
pub use sampling::{sample_patch, Patch};
pub use schedule::{poly_lr, Sgd};
pub use trainer::{preprocess_case, FoldTrainer, stable_epoch_seconds, train_fold, EpochLog, TrainConfig, TrainReport};
