//! Gradient-check probes shared by the gradient tests and the acceptance
//! suite (included via `#[path]`).
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use umamba_core::autodiff::{ParamStore, Tape, Var};
use umamba_core::error::Result;
use umamba_core::gradcheck::{check_inputs, check_params, random_tensor, GradCheck, InputProbe, ParamProbe};
use umamba_core::network::{NetworkConfig, SegNetwork, Variant};
use umamba_core::ops::{DEFAULT_EPS, LEAKY_SLOPE};
use umamba_core::train::dice_ce_loss;
use umamba_core::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
pub enum Kind {
    Conv3d,
    Conv3dStrided,
    ConvTranspose,
    InstanceNorm,
    LayerNorm,
    Linear,
    DepthwiseConv1d,
    LeakyRelu,
    Silu,
    Softplus,
    Softmax,
    Concat,
    Transpose,
    Mul,
    SelectiveScan,
}

pub struct OpProbe {
    pub kind: Kind,
    pub weights: Tensor<f64>,
}

impl InputProbe for OpProbe {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, x: &[Var]) -> Result<Var> {
        let y = match self.kind {
            Kind::Conv3d => tape.conv3d(x[0], x[1], Some(x[2]), [1, 1, 1], [1, 0, 1])?,
            Kind::Conv3dStrided => tape.conv3d(x[0], x[1], None, [1, 2, 2], [0, 1, 1])?,
            Kind::ConvTranspose => tape.conv_transpose3d(x[0], x[1], Some(x[2]), [1, 2, 2])?,
            Kind::InstanceNorm => tape.instance_norm(x[0], x[1], x[2], DEFAULT_EPS)?,
            Kind::LayerNorm => tape.layer_norm(x[0], x[1], x[2], DEFAULT_EPS)?,
            Kind::Linear => tape.linear(x[0], x[1], Some(x[2]))?,
            Kind::DepthwiseConv1d => tape.depthwise_conv1d_causal(x[0], x[1])?,
            Kind::LeakyRelu => tape.leaky_relu(x[0], LEAKY_SLOPE),
            Kind::Silu => tape.silu(x[0]),
            Kind::Softplus => tape.softplus(x[0]),
            Kind::Softmax => tape.softmax_channels(x[0])?,
            Kind::Concat => tape.concat_channels(x[0], x[1])?,
            Kind::Transpose => tape.transpose_last2(x[0])?,
            Kind::Mul => tape.mul(x[0], x[1])?,
            Kind::SelectiveScan => {
                // delta must stay positive: feed it through softplus
                let delta = tape.softplus(x[1]);
                scan_node(tape, [x[0], delta, x[2], x[3], x[4], x[5]])?
            }
        };
        let w = tape.constant(self.weights.cast());
        let prod = tape.mul(y, w)?;
        Ok(tape.sum(prod))
    }
}

fn scan_node<T: Scalar>(tape: &mut Tape<T>, v: [Var; 6]) -> Result<Var> {
    umamba_core::mamba::selective_scan_var(tape, v)
}

pub fn inputs(kind: Kind, rng: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Vec<usize>) {
    let r = |s: &[usize], rng: &mut ChaCha8Rng| random_tensor(s, 1.0, rng);
    match kind {
        Kind::Conv3d => (vec![r(&[2, 2, 3, 4, 3], rng), r(&[3, 2, 3, 1, 3], rng), r(&[3], rng)], vec![2, 3, 3, 4, 3]),
        Kind::Conv3dStrided => (vec![r(&[1, 2, 2, 4, 5], rng), r(&[2, 2, 1, 3, 3], rng)], vec![1, 2, 2, 2, 3]),
        Kind::ConvTranspose => (vec![r(&[2, 3, 2, 2, 1], rng), r(&[3, 2, 1, 2, 2], rng), r(&[2], rng)], vec![2, 2, 2, 4, 2]),
        Kind::InstanceNorm => (vec![r(&[2, 3, 2, 2, 3], rng), r(&[3], rng), r(&[3], rng)], vec![2, 3, 2, 2, 3]),
        Kind::LayerNorm => (vec![r(&[2, 3, 5], rng), r(&[5], rng), r(&[5], rng)], vec![2, 3, 5]),
        Kind::Linear => (vec![r(&[2, 3, 4], rng), r(&[5, 4], rng), r(&[5], rng)], vec![2, 3, 5]),
        Kind::DepthwiseConv1d => (vec![r(&[2, 3, 7], rng), r(&[3, 4], rng)], vec![2, 3, 7]),
        Kind::LeakyRelu | Kind::Silu | Kind::Softplus => (vec![r(&[3, 7], rng)], vec![3, 7]),
        Kind::Softmax => (vec![r(&[2, 3, 2, 2, 2], rng)], vec![2, 3, 2, 2, 2]),
        Kind::Concat => (vec![r(&[2, 2, 3], rng), r(&[2, 1, 3], rng)], vec![2, 3, 3]),
        Kind::Transpose => (vec![r(&[2, 3, 4], rng)], vec![2, 4, 3]),
        Kind::Mul => (vec![r(&[4, 3], rng), r(&[4, 3], rng)], vec![4, 3]),
        Kind::SelectiveScan => (
            vec![
                r(&[2, 6, 3], rng),
                r(&[2, 6, 3], rng),
                random_tensor(&[3, 2], 0.5, rng),
                r(&[2, 6, 2], rng),
                r(&[2, 6, 2], rng),
                r(&[3], rng),
            ],
            vec![2, 6, 3],
        ),
    }
}

pub const KINDS: [Kind; 15] = [
    Kind::Conv3d,
    Kind::Conv3dStrided,
    Kind::ConvTranspose,
    Kind::InstanceNorm,
    Kind::LayerNorm,
    Kind::Linear,
    Kind::DepthwiseConv1d,
    Kind::LeakyRelu,
    Kind::Silu,
    Kind::Softplus,
    Kind::Softmax,
    Kind::Concat,
    Kind::Transpose,
    Kind::Mul,
    Kind::SelectiveScan,
];

/// Finite-difference check of one op on inputs drawn from `seed`.
pub fn check_op<T: Scalar>(kind: Kind, seed: u64, step: f64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed * 101 + kind as u64);
    let (xs, out_shape) = inputs(kind, &mut rng);
    let probe = OpProbe { kind, weights: random_tensor(&out_shape, 1.0, &mut rng) };
    check_inputs::<T, _>(&probe, &xs, step).unwrap()
}

/// Deep-supervision Dice+CE loss of a whole network on a fixed batch.
pub struct NetProbe {
    pub net: SegNetwork<f64>,
    pub x: Tensor<f64>,
    pub labels: Vec<u8>,
}

impl ParamProbe for NetProbe {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> Result<Var> {
        let net = self.net.with_store(store.clone());
        let x = tape.constant(self.x.cast());
        let outs = net.forward(tape, x)?;
        Ok(dice_ce_loss(tape, &outs, &self.labels).expect("labels in range"))
    }
}

/// The desk UMambaAdj network on a small input (patch 4x16x16, the smallest
/// divisible by its total stride) with random labels.
pub fn desk_net_probe(seed: u64) -> NetProbe {
    let config = NetworkConfig::desk().with_variant(Variant::UmambaAdj);
    let net = SegNetwork::<f64>::build(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x = random_tensor(&[1, 1, 4, 16, 16], 1.0, &mut rng);
    let labels = (0..4 * 16 * 16).map(|i| ((i * 7 + seed as usize) % 11 % 3) as u8).collect();
    NetProbe { net, x, labels }
}

/// Finite-difference step for the network check. The reference side runs in
/// f64, and larger steps cross LeakyReLU kinks and the curvature of instance
/// norm over the 1x2x2 bottleneck.
pub const NET_STEP: f64 = 1e-7;

/// Directional finite-difference check of the desk network's parameter gradient.
pub fn check_desk_net<T: Scalar>(seed: u64, directions: usize) -> GradCheck {
    let probe = desk_net_probe(seed);
    check_params::<T, _>(&probe, &probe.net.store, NET_STEP, directions, seed).unwrap()
}
