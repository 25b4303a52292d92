use rand::SeedableRng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Result, TensorError};
use crate::init::{he_normal, InitRng};
use crate::mamba::MambaLayer;
use crate::network::config::{ConfigError, NetworkConfig};
use crate::ops::{DEFAULT_EPS, LEAKY_SLOPE};
use crate::scalar::Scalar;
use crate::tensor::{Dims3, Tensor};

fn same_padding(kernel: Dims3) -> Dims3 {
    [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2]
}

/// Bias-free convolution followed by instance normalization.
#[derive(Clone, Debug)]
struct ConvNorm {
    weight: ParamId,
    gamma: ParamId,
    beta: ParamId,
    stride: Dims3,
    padding: Dims3,
}

impl ConvNorm {
    #[allow(clippy::too_many_arguments)]
    fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        conv_name: &str,
        norm_name: &str,
        cin: usize,
        cout: usize,
        kernel: Dims3,
        stride: Dims3,
        rng: &mut InitRng,
    ) -> Self {
        let fan_in = cin * kernel.iter().product::<usize>();
        let weight = store.add(
            format!("{conv_name}.weight"),
            he_normal(&[cout, cin, kernel[0], kernel[1], kernel[2]], fan_in, rng),
        );
        let gamma = store.add(format!("{norm_name}.weight"), Tensor::ones(&[cout]));
        let beta = store.add(format!("{norm_name}.bias"), Tensor::zeros(&[cout]));
        Self { weight, gamma, beta, stride, padding: same_padding(kernel) }
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let y = tape.conv3d(x, w, None, self.stride, self.padding)?;
        let (g, b) = (tape.param(store, self.gamma), tape.param(store, self.beta));
        tape.instance_norm(y, g, b, DEFAULT_EPS)
    }

    fn forward_act<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.forward(tape, store, x)?;
        Ok(tape.leaky_relu(y, LEAKY_SLOPE))
    }
}

#[derive(Clone, Debug)]
enum Block {
    /// conv-norm-act twice.
    Plain { c1: ConvNorm, c2: ConvNorm },
    /// conv-norm-act, conv-norm, add skip, act.
    Residual { c1: ConvNorm, c2: ConvNorm, skip: Option<ConvNorm> },
}

impl Block {
    #[allow(clippy::too_many_arguments)]
    fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        residual: bool,
        cin: usize,
        cout: usize,
        kernel: Dims3,
        stride: Dims3,
        rng: &mut InitRng,
    ) -> Self {
        let c1 = ConvNorm::build(store, &format!("{prefix}.conv1"), &format!("{prefix}.norm1"), cin, cout, kernel, stride, rng);
        let c2 = ConvNorm::build(store, &format!("{prefix}.conv2"), &format!("{prefix}.norm2"), cout, cout, kernel, [1, 1, 1], rng);
        if !residual {
            return Block::Plain { c1, c2 };
        }
        let skip = (cin != cout || stride != [1, 1, 1]).then(|| {
            ConvNorm::build(store, &format!("{prefix}.skip.conv"), &format!("{prefix}.skip.norm"), cin, cout, [1, 1, 1], stride, rng)
        });
        Block::Residual { c1, c2, skip }
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        match self {
            Block::Plain { c1, c2 } => {
                let h = c1.forward_act(tape, store, x)?;
                c2.forward_act(tape, store, h)
            }
            Block::Residual { c1, c2, skip } => {
                let h = c1.forward_act(tape, store, x)?;
                let h = c2.forward(tape, store, h)?;
                let s = match skip {
                    Some(s) => s.forward(tape, store, x)?,
                    None => x,
                };
                let sum = tape.add(h, s)?;
                Ok(tape.leaky_relu(sum, LEAKY_SLOPE))
            }
        }
    }
}

#[derive(Clone, Debug)]
struct EncoderStage {
    stem: Option<ConvNorm>,
    blocks: Vec<Block>,
    /// Indexed like `blocks` when placed per block, otherwise at most one entry.
    mambas: Vec<MambaLayer>,
}

#[derive(Clone, Debug)]
enum DecoderBlock {
    Single(ConvNorm),
    Residual(Block),
}

#[derive(Clone, Debug)]
struct DecoderStage {
    up_weight: ParamId,
    up_bias: ParamId,
    up_stride: Dims3,
    block: DecoderBlock,
}

#[derive(Clone, Debug)]
struct Head {
    weight: ParamId,
    bias: ParamId,
}

/// Encoder-decoder segmentation network with deep supervision.
#[derive(Clone, Debug)]
pub struct SegNetwork<T: Scalar> {
    pub config: NetworkConfig,
    pub store: ParamStore<T>,
    encoder: Vec<EncoderStage>,
    /// `decoder[s]` produces the features at encoder scale `s`.
    decoder: Vec<DecoderStage>,
    heads: Vec<Head>,
}

impl<T: Scalar> SegNetwork<T> {
    pub fn build(config: NetworkConfig, seed: u64) -> std::result::Result<Self, ConfigError> {
        config.validate()?;
        let mut rng = InitRng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let n = config.n_stages();

        let mut encoder = Vec::with_capacity(n);
        let mut cin = config.in_channels;
        for (i, spec) in config.stages.iter().enumerate() {
            let prefix = format!("enc.stage{}", i + 1);
            let stem = (i == 0 && config.residual_encoder).then(|| {
                let s = ConvNorm::build(
                    &mut store,
                    &format!("{prefix}.stem.conv"),
                    &format!("{prefix}.stem.norm"),
                    cin,
                    spec.features,
                    spec.kernel,
                    [1, 1, 1],
                    &mut rng,
                );
                cin = spec.features;
                s
            });
            let mut blocks = Vec::with_capacity(spec.n_res_blocks);
            let mut mambas = Vec::new();
            for b in 0..spec.n_res_blocks {
                let stride = if b == 0 { spec.stride } else { [1, 1, 1] };
                let bp = format!("{prefix}.block{}", b + 1);
                blocks.push(Block::build(&mut store, &bp, config.residual_encoder, cin, spec.features, spec.kernel, stride, &mut rng));
                cin = spec.features;
                if spec.mamba && config.mamba_per_block {
                    mambas.push(MambaLayer::build(&mut store, &format!("{bp}.mamba"), cin, config.mamba, &mut rng));
                }
            }
            if spec.mamba && !config.mamba_per_block {
                mambas.push(MambaLayer::build(&mut store, &format!("{prefix}.mamba"), cin, config.mamba, &mut rng));
            }
            encoder.push(EncoderStage { stem, blocks, mambas });
        }

        let mut decoder = Vec::with_capacity(n - 1);
        for s in 0..n - 1 {
            let prefix = format!("dec.stage{}", s + 1);
            let (below, here) = (&config.stages[s + 1], &config.stages[s]);
            let k = below.stride;
            let up_weight = store.add(
                format!("{prefix}.up.weight"),
                he_normal(&[below.features, here.features, k[0], k[1], k[2]], below.features, &mut rng),
            );
            let up_bias = store.add(format!("{prefix}.up.bias"), Tensor::zeros(&[here.features]));
            let cat = 2 * here.features;
            let block = if config.residual_decoder {
                let bp = format!("{prefix}.block");
                DecoderBlock::Residual(Block::build(&mut store, &bp, true, cat, here.features, here.kernel, [1, 1, 1], &mut rng))
            } else {
                DecoderBlock::Single(ConvNorm::build(
                    &mut store,
                    &format!("{prefix}.block.conv"),
                    &format!("{prefix}.block.norm"),
                    cat,
                    here.features,
                    here.kernel,
                    [1, 1, 1],
                    &mut rng,
                ))
            };
            decoder.push(DecoderStage { up_weight, up_bias, up_stride: k, block });
        }

        let heads = (0..config.deep_supervision_levels)
            .map(|level| {
                let f = config.stages[level].features;
                let weight = store.add(
                    format!("head{}.weight", level + 1),
                    he_normal(&[config.n_classes, f, 1, 1, 1], f, &mut rng),
                );
                let bias = store.add(format!("head{}.bias", level + 1), Tensor::zeros(&[config.n_classes]));
                Head { weight, bias }
            })
            .collect();

        Ok(Self { config, store, encoder, decoder, heads })
    }

    /// The same architecture bound to another parameter store (which must
    /// come from an identically configured network, possibly at another precision).
    pub fn with_store<U: Scalar>(&self, store: ParamStore<U>) -> SegNetwork<U> {
        SegNetwork {
            config: self.config.clone(),
            store,
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            heads: self.heads.clone(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn mamba_layers(&self) -> usize {
        self.encoder.iter().map(|s| s.mambas.len()).sum()
    }

    /// Logits for every supervised scale, finest first.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Vec<Var>> {
        self.forward_levels(tape, x, self.heads.len())
    }

    /// Like [`forward`](Self::forward) but evaluates only the first `levels` heads.
    pub fn forward_levels(&self, tape: &mut Tape<T>, x: Var, levels: usize) -> Result<Vec<Var>> {
        let store = &self.store;
        let shape = tape.shape(x).to_vec();
        if shape.len() != 5 || shape[1] != self.config.in_channels {
            return Err(TensorError::shape(
                "network",
                format!("expected [B, {}, D, H, W], got {shape:?}", self.config.in_channels),
            ));
        }
        self.config.check_patch([shape[2], shape[3], shape[4]])?;
        let n = self.encoder.len();

        let mut skips = Vec::with_capacity(n);
        let mut h = x;
        for (i, stage) in self.encoder.iter().enumerate() {
            tape.push_scope(&format!("enc.stage{}", i + 1));
            if let Some(stem) = &stage.stem {
                h = stem.forward_act(tape, store, h)?;
            }
            for (b, block) in stage.blocks.iter().enumerate() {
                h = block.forward(tape, store, h)?;
                if self.config.mamba_per_block {
                    if let Some(m) = stage.mambas.get(b) {
                        h = m.forward(tape, store, h)?;
                    }
                }
            }
            if !self.config.mamba_per_block {
                if let Some(m) = stage.mambas.first() {
                    h = m.forward(tape, store, h)?;
                }
            }
            tape.pop_scope();
            skips.push(h);
        }

        let levels = levels.min(self.heads.len());
        // the deepest decoder output still needed
        let lowest = (0..levels).filter(|&l| l < n - 1).min().unwrap_or(n - 1);
        let mut features: Vec<Option<Var>> = vec![None; n];
        features[n - 1] = Some(skips[n - 1]);
        for s in (lowest..n - 1).rev() {
            let stage = &self.decoder[s];
            tape.push_scope(&format!("dec.stage{}", s + 1));
            let (w, b) = (tape.param(store, stage.up_weight), tape.param(store, stage.up_bias));
            let up = tape.conv_transpose3d(h, w, Some(b), stage.up_stride)?;
            let cat = tape.concat_channels(up, skips[s])?;
            h = match &stage.block {
                DecoderBlock::Single(c) => c.forward_act(tape, store, cat)?,
                DecoderBlock::Residual(block) => block.forward(tape, store, cat)?,
            };
            tape.pop_scope();
            features[s] = Some(h);
        }

        let mut out = Vec::with_capacity(levels);
        for (level, head) in self.heads.iter().take(levels).enumerate() {
            tape.push_scope(&format!("head{}", level + 1));
            let src = features[level].expect("decoder feature computed");
            let (w, b) = (tape.param(store, head.weight), tape.param(store, head.bias));
            out.push(tape.conv3d(src, w, Some(b), [1, 1, 1], [0, 0, 0])?);
            tape.pop_scope();
        }
        Ok(out)
    }

    /// Full-resolution logits `[B, n_classes, D, H, W]` without gradient bookkeeping.
    pub fn predict_logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.forward_levels(&mut tape, xv, 1)?;
        Ok(tape.value(out[0])?.clone())
    }

    /// Shape of each encoder stage's output (after its Mamba layer, if any),
    /// read from a traced shape-only forward pass.
    pub fn encoder_output_shapes(&self, input_shape: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut tape = Tape::<T>::shape_only();
        tape.enable_trace();
        let x = tape.input_shape(input_shape);
        self.forward(&mut tape, x)?;
        (1..=self.encoder.len())
            .map(|k| {
                let scope = format!("enc.stage{k}");
                tape.trace()
                    .iter()
                    .rev()
                    .find(|e| e.scope == scope || e.scope.starts_with(&format!("{scope}.")))
                    .map(|e| e.shape.clone())
                    .ok_or_else(|| TensorError::Config(format!("no ops recorded in {scope}")))
            })
            .collect()
    }

    /// Output shapes of every head for an input shape, computed without data.
    pub fn output_shapes(&self, input_shape: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut tape = Tape::shape_only();
        let x = tape.input_shape(input_shape);
        let outs = self.forward(&mut tape, x)?;
        Ok(outs.iter().map(|&v| tape.shape(v).to_vec()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Variant;
    use std::collections::BTreeSet;

    fn tiny(variant: Variant) -> NetworkConfig {
        let mut c = NetworkConfig::desk().with_variant(variant);
        for (s, f) in c.stages.iter_mut().zip([4, 8, 8, 8]) {
            s.features = f;
        }
        c.mamba.state_size = 2;
        c
    }

    #[test]
    fn desk_head_shapes() {
        for v in Variant::ALL {
            let net = SegNetwork::<f32>::build(NetworkConfig::desk().with_variant(v), 0).unwrap();
            let shapes = net.output_shapes(&[2, 1, 16, 64, 64]).unwrap();
            assert_eq!(
                shapes,
                vec![vec![2, 3, 16, 64, 64], vec![2, 3, 16, 32, 32], vec![2, 3, 8, 16, 16], vec![2, 3, 4, 8, 8]],
                "{v}"
            );
        }
    }

    #[test]
    fn mamba_placement_by_trace() {
        for (v, expect) in [
            (Variant::UmambaAdj, [false, true, true, true]),
            (Variant::UmambaEnc, [true, true, true, true]),
            (Variant::Resenc, [false; 4]),
            (Variant::Default, [false; 4]),
        ] {
            let net = SegNetwork::<f32>::build(tiny(v), 0).unwrap();
            let mut tape = Tape::shape_only();
            tape.enable_trace();
            let x = tape.input_shape(&[1, 1, 4, 8, 8]);
            net.forward(&mut tape, x).unwrap();
            for (i, want) in expect.iter().enumerate() {
                let scope = format!("enc.stage{}", i + 1);
                let hit = tape
                    .trace()
                    .iter()
                    .any(|e| e.op == "selective_scan" && (e.scope == scope || e.scope.starts_with(&format!("{scope}."))));
                assert_eq!(hit, *want, "{v} stage {}", i + 1);
            }
        }
    }

    #[test]
    fn adj_and_resenc_differ_only_by_mamba() {
        let names = |v| -> BTreeSet<String> {
            SegNetwork::<f32>::build(tiny(v), 0).unwrap().store.names().map(String::from).collect()
        };
        let (adj, res) = (names(Variant::UmambaAdj), names(Variant::Resenc));
        assert!(res.is_subset(&adj));
        let extra: BTreeSet<String> = adj.difference(&res).map(|n| n.split(".mamba.").next().unwrap().to_string()).collect();
        let expect: BTreeSet<String> = ["enc.stage2", "enc.stage3", "enc.stage4"].iter().map(|s| s.to_string()).collect();
        assert_eq!(extra, expect);
        let def = names(Variant::Default);
        assert!(!def.iter().any(|n| n.contains(".skip.") || n.contains(".stem.") || n.contains("mamba")));
        let enc = names(Variant::UmambaEnc);
        assert!(enc.iter().any(|n| n.starts_with("dec.stage1.block.conv2")));
        assert!(enc.iter().any(|n| n.starts_with("enc.stage1.mamba.")));
    }

    #[test]
    fn per_block_mamba_placement() {
        let mut c = tiny(Variant::UmambaAdj);
        c.mamba_per_block = true;
        c.stages[2].n_res_blocks = 2;
        let net = SegNetwork::<f32>::build(c, 0).unwrap();
        assert_eq!(net.mamba_layers(), 4);
        assert!(net.store.find("enc.stage3.block2.mamba.A_log").is_some());
    }

    #[test]
    fn residual_block_with_zero_convs_passes_skip() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = InitRng::seed_from_u64(0);
        let block = Block::build(&mut store, "b", true, 3, 3, [3, 3, 3], [1, 1, 1], &mut rng);
        for p in store.iter_mut() {
            if p.name.contains("conv") {
                p.value.fill(0.0);
            }
        }
        let x = Tensor::from_fn(&[1, 3, 2, 3, 4], |i| (i as f64 * 0.37).sin());
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = block.forward(&mut tape, &store, xv).unwrap();
        let expect = crate::ops::leaky_relu(&x, LEAKY_SLOPE);
        assert!(tape.value(y).unwrap().max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn indivisible_patch_is_an_error() {
        let net = SegNetwork::<f32>::build(tiny(Variant::UmambaAdj), 0).unwrap();
        let err = net.output_shapes(&[1, 1, 4, 12, 8]).unwrap_err();
        assert!(err.to_string().contains("[4, 8, 8]"), "{err}");
    }

    #[test]
    fn forward_is_finite_and_deterministic() {
        let x = Tensor::from_fn(&[1, 1, 4, 8, 8], |i| ((i * 7919) % 13) as f32 / 13.0);
        let a = SegNetwork::<f32>::build(tiny(Variant::UmambaAdj), 3).unwrap().predict_logits(&x).unwrap();
        let b = SegNetwork::<f32>::build(tiny(Variant::UmambaAdj), 3).unwrap().predict_logits(&x).unwrap();
        assert_eq!(a.shape(), &[1, 3, 4, 8, 8]);
        assert!(a.is_finite());
        assert_eq!(a.data(), b.data());
    }
}
