mod checkpoint;
mod config;
mod model;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError};
pub use config::{encoder_shape_ledger, ConfigError, NetworkConfig, StageShape, StageSpec, Variant};
pub use model::SegNetwork;
