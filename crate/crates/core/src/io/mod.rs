pub mod manifest;
pub mod run_config;
pub mod synth;
pub mod volume_file;

pub use manifest::{load_dataset, load_images, load_masks, CaseEntry, DatasetManifest, ManifestError};
pub use run_config::{CompareConfig, DataPaths, RunConfig, RunConfigError};
pub use synth::{synth_case, synth_cases, synth_generate, SynthConfig};
pub use volume_file::{read_image, read_mask, read_volume, write_image, write_mask, VolumeIoError};
