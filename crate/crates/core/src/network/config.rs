use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mamba::MambaConfig;
use crate::tensor::Dims3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("stage {stage}: {detail}")]
    Stage { stage: usize, detail: String },
    #[error("variant {variant}: {detail}")]
    Preset { variant: Variant, detail: String },
    #[error("{0}")]
    Invalid(String),
    #[error("patch {patch:?} is not divisible by the cumulative stride {required:?} (stage {stage})")]
    Indivisible { patch: Dims3, required: Dims3, stage: usize },
}

impl From<ConfigError> for crate::error::TensorError {
    fn from(e: ConfigError) -> Self {
        crate::error::TensorError::Config(e.to_string())
    }
}

/// One encoder resolution level.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub features: usize,
    pub kernel: Dims3,
    /// Applied by the first convolution of the stage.
    pub stride: Dims3,
    pub n_res_blocks: usize,
    pub mamba: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain (non-residual) encoder, single-conv decoder, no Mamba.
    Default,
    /// Residual encoder, single-conv decoder, no Mamba.
    Resenc,
    /// Mamba in every stage, residual encoder and decoder.
    UmambaEnc,
    /// Mamba from stage 2 onward, residual encoder, single-conv decoder.
    UmambaAdj,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Default, Variant::Resenc, Variant::UmambaEnc, Variant::UmambaAdj];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Default => "default",
            Variant::Resenc => "resenc",
            Variant::UmambaEnc => "umamba_enc",
            Variant::UmambaAdj => "umamba_adj",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Variant::Default => "nnUNet default",
            Variant::Resenc => "nnUNet ResEnc",
            Variant::UmambaEnc => "UMambaEnc",
            Variant::UmambaAdj => "UMambaAdj",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub variant: Variant,
    pub in_channels: usize,
    pub n_classes: usize,
    pub stages: Vec<StageSpec>,
    pub deep_supervision_levels: usize,
    pub residual_encoder: bool,
    pub residual_decoder: bool,
    pub mamba: MambaConfig,
    /// Place a Mamba layer after every residual block instead of once per stage.
    pub mamba_per_block: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl NetworkConfig {
    /// The six-stage configuration (32..320 features, anisotropic first stage).
    pub fn full() -> Self {
        let features = [32, 64, 128, 256, 320, 320];
        let blocks = [1, 3, 4, 6, 6, 6];
        let stages = (0..6)
            .map(|i| StageSpec {
                features: features[i],
                kernel: if i == 0 { [1, 3, 3] } else { [3, 3, 3] },
                stride: match i {
                    0 => [1, 1, 1],
                    1 => [1, 2, 2],
                    _ => [2, 2, 2],
                },
                n_res_blocks: blocks[i],
                mamba: i > 0,
            })
            .collect();
        Self {
            variant: Variant::UmambaAdj,
            in_channels: 1,
            n_classes: 3,
            stages,
            deep_supervision_levels: 4,
            residual_encoder: true,
            residual_decoder: false,
            mamba: MambaConfig::default(),
            mamba_per_block: false,
        }
    }

    /// Four-stage CPU-sized configuration with the same stride pattern.
    pub fn desk() -> Self {
        let features = [16, 32, 64, 128];
        let stages = (0..4)
            .map(|i| StageSpec {
                features: features[i],
                kernel: if i == 0 { [1, 3, 3] } else { [3, 3, 3] },
                stride: match i {
                    0 => [1, 1, 1],
                    1 => [1, 2, 2],
                    _ => [2, 2, 2],
                },
                n_res_blocks: 1,
                mamba: i > 0,
            })
            .collect();
        let full = Self::full();
        Self { stages, mamba: MambaConfig { state_size: 4, ..full.mamba }, ..full }
    }

    /// Same stage geometry with the Mamba / residual flags of `variant`.
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.mamba = match variant {
                Variant::Default | Variant::Resenc => false,
                Variant::UmambaEnc => true,
                Variant::UmambaAdj => i > 0,
            };
        }
        self.residual_encoder = variant != Variant::Default;
        self.residual_decoder = variant == Variant::UmambaEnc;
        self
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    /// Cumulative stride product at the entry of every stage.
    pub fn cumulative_strides(&self) -> Vec<Dims3> {
        let mut acc = [1, 1, 1];
        self.stages
            .iter()
            .map(|s| {
                for a in 0..3 {
                    acc[a] *= s.stride[a];
                }
                acc
            })
            .collect()
    }

    pub fn total_stride(&self) -> Dims3 {
        self.cumulative_strides().last().copied().unwrap_or([1, 1, 1])
    }

    pub fn mamba_layer_count(&self) -> usize {
        self.stages
            .iter()
            .filter(|s| s.mamba)
            .map(|s| if self.mamba_per_block { s.n_res_blocks } else { 1 })
            .sum()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.stages.len() < 2 {
            return Err(ConfigError::Invalid("need at least two stages".into()));
        }
        if self.n_classes < 2 || self.in_channels == 0 {
            return Err(ConfigError::Invalid("need >= 2 classes and >= 1 input channel".into()));
        }
        if self.deep_supervision_levels == 0 || self.deep_supervision_levels > self.stages.len() {
            return Err(ConfigError::Invalid(format!(
                "deep_supervision_levels {} must be in 1..={}",
                self.deep_supervision_levels,
                self.stages.len()
            )));
        }
        let m = &self.mamba;
        if m.expand == 0 || m.state_size == 0 || m.conv_kernel == 0 || m.dt_rank == Some(0) {
            return Err(ConfigError::Invalid("mamba sizes must be positive".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            let stage = i + 1;
            if s.features == 0 || s.n_res_blocks == 0 {
                return Err(ConfigError::Stage { stage, detail: "features and block count must be positive".into() });
            }
            if s.stride.iter().any(|&v| v != 1 && v != 2) {
                return Err(ConfigError::Stage { stage, detail: format!("stride {:?} outside {{1, 2}}", s.stride) });
            }
            if s.kernel.iter().any(|&k| k % 2 == 0) {
                return Err(ConfigError::Stage { stage, detail: format!("kernel {:?} must be odd", s.kernel) });
            }
        }
        if self.stages[0].stride != [1, 1, 1] {
            return Err(ConfigError::Stage { stage: 1, detail: "first stage must not downsample".into() });
        }
        let flags: Vec<bool> = self.stages.iter().map(|s| s.mamba).collect();
        let preset = |detail: &str| ConfigError::Preset { variant: self.variant, detail: detail.into() };
        match self.variant {
            Variant::UmambaAdj => {
                if flags[0] || !flags[1..].iter().all(|&f| f) {
                    return Err(preset("Mamba must be off in stage 1 and on in every later stage"));
                }
                if self.residual_decoder || !self.residual_encoder {
                    return Err(preset("needs a residual encoder and a single-conv decoder"));
                }
            }
            Variant::UmambaEnc => {
                if !flags.iter().all(|&f| f) {
                    return Err(preset("Mamba must be on in every stage"));
                }
                if !self.residual_decoder || !self.residual_encoder {
                    return Err(preset("needs residual encoder and decoder blocks"));
                }
            }
            Variant::Resenc | Variant::Default => {
                if flags.iter().any(|&f| f) {
                    return Err(preset("must not contain Mamba layers"));
                }
                if self.residual_decoder {
                    return Err(preset("uses a single-conv decoder"));
                }
                if self.residual_encoder != (self.variant == Variant::Resenc) {
                    return Err(preset("residual encoder flag does not match the preset"));
                }
            }
        }
        Ok(())
    }

    /// Checks that a patch survives every downsampling step exactly.
    pub fn check_patch(&self, patch: Dims3) -> Result<(), ConfigError> {
        for (i, cum) in self.cumulative_strides().into_iter().enumerate() {
            if (0..3).any(|a| patch[a] == 0 || patch[a] % cum[a] != 0) {
                return Err(ConfigError::Indivisible { patch, required: self.total_stride(), stage: i + 1 });
            }
        }
        Ok(())
    }
}

/// Feature-map shape at the output of one encoder stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StageShape {
    pub channels: usize,
    pub dims: Dims3,
}

/// Per-stage encoder output shapes for a patch, by stride arithmetic alone.
pub fn encoder_shape_ledger(config: &NetworkConfig, patch: Dims3) -> Result<Vec<StageShape>, ConfigError> {
    config.check_patch(patch)?;
    let mut dims = patch;
    Ok(config
        .stages
        .iter()
        .map(|s| {
            for a in 0..3 {
                dims[a] /= s.stride[a];
            }
            StageShape { channels: s.features, dims }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_values() {
        let c = NetworkConfig::full();
        assert_eq!(c.stages[0].kernel, [1, 3, 3]);
        assert_eq!(c.stages[1].stride, [1, 2, 2]);
        assert_eq!(c.stages.iter().map(|s| s.n_res_blocks).collect::<Vec<_>>(), vec![1, 3, 4, 6, 6, 6]);
        assert_eq!(c.mamba_layer_count(), 5);
        assert_eq!(c.total_stride(), [16, 32, 32]);
        c.validate().unwrap();
    }

    #[test]
    fn full_scale_ledger() {
        let ledger = encoder_shape_ledger(&NetworkConfig::full(), [48, 192, 192]).unwrap();
        let dims: Vec<Dims3> = ledger.iter().map(|s| s.dims).collect();
        assert_eq!(dims, vec![[48, 192, 192], [48, 96, 96], [24, 48, 48], [12, 24, 24], [6, 12, 12], [3, 6, 6]]);
        let ch: Vec<usize> = ledger.iter().map(|s| s.channels).collect();
        assert_eq!(ch, vec![32, 64, 128, 256, 320, 320]);
    }

    #[test]
    fn presets_validate() {
        for v in Variant::ALL {
            NetworkConfig::full().with_variant(v).validate().unwrap();
            NetworkConfig::desk().with_variant(v).validate().unwrap();
        }
        assert_eq!(NetworkConfig::full().with_variant(Variant::UmambaEnc).mamba_layer_count(), 6);
        assert_eq!(NetworkConfig::full().with_variant(Variant::Resenc).mamba_layer_count(), 0);
    }

    #[test]
    fn bad_configs_rejected() {
        let mut c = NetworkConfig::desk();
        c.stages[2].stride = [3, 2, 2];
        assert!(matches!(c.validate(), Err(ConfigError::Stage { stage: 3, .. })));
        let mut c = NetworkConfig::desk();
        c.stages[1].kernel = [2, 3, 3];
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::desk();
        c.stages[0].mamba = true;
        assert!(matches!(c.validate(), Err(ConfigError::Preset { .. })));
    }

    #[test]
    fn indivisible_patch_reports_requirement() {
        let err = NetworkConfig::desk().check_patch([16, 60, 64]).unwrap_err();
        assert!(err.to_string().contains("[4, 8, 8]"), "{err}");
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.as_str()));
        }
    }
}
