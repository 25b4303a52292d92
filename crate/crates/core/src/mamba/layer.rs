use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Result, TensorError};
use crate::init::{he_normal, uniform, InitRng};
use crate::mamba::scan::{scan_dims, SelectiveScanOp};
use crate::ops::DEFAULT_EPS;
use crate::scalar::Scalar;
use crate::tensor::{Dims3, Tensor};
use rand::Rng;

/// Hyperparameters of one Mamba layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MambaConfig {
    /// Channel expansion factor of both branches.
    pub expand: usize,
    /// SSM state size per channel.
    pub state_size: usize,
    /// Causal depthwise convolution width.
    pub conv_kernel: usize,
    /// Rank of the delta projection; `None` means `ceil(channels / 16)`.
    pub dt_rank: Option<usize>,
}

impl Default for MambaConfig {
    fn default() -> Self {
        Self { expand: 2, state_size: 16, conv_kernel: 4, dt_rank: None }
    }
}

/// A token sequence `[B, L, C]` remembering the spatial grid it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence<T: Scalar> {
    pub data: Tensor<T>,
    pub origin_shape: Dims3,
}

/// `[B, C, H, W, D] -> [B, H*W*D, C]`; token index of voxel `(h, w, d)` is `h*W*D + w*D + d`.
pub fn flatten_tokens<T: Scalar>(x: &Tensor<T>) -> Result<TokenSequence<T>> {
    let s = x.shape();
    if s.len() != 5 {
        return Err(TensorError::shape("flatten_tokens", format!("expected [B, C, H, W, D], got {s:?}")));
    }
    let origin_shape = [s[2], s[3], s[4]];
    let l = origin_shape.iter().product();
    let data = crate::ops::transpose_last2(&x.clone().reshape(&[s[0], s[1], l])?)?;
    Ok(TokenSequence { data, origin_shape })
}

pub fn unflatten_tokens<T: Scalar>(tokens: &TokenSequence<T>) -> Result<Tensor<T>> {
    let s = tokens.data.shape();
    let l: usize = tokens.origin_shape.iter().product();
    if s.len() != 3 || s[1] != l {
        return Err(TensorError::shape(
            "unflatten_tokens",
            format!("{s:?} does not hold {l} tokens for grid {:?}", tokens.origin_shape),
        ));
    }
    let [h, w, d] = tokens.origin_shape;
    crate::ops::transpose_last2(&tokens.data)?.reshape(&[s[0], s[2], h, w, d])
}

/// Parameter handles of one Mamba layer.
#[derive(Clone, Debug)]
pub struct MambaLayer {
    pub channels: usize,
    pub config: MambaConfig,
    pub norm_weight: ParamId,
    pub norm_bias: ParamId,
    pub in_proj_main: ParamId,
    pub in_proj_gate: ParamId,
    pub conv_kernel: ParamId,
    pub delta_down: ParamId,
    pub delta_up: ParamId,
    pub delta_bias: ParamId,
    pub a_log: ParamId,
    pub b_proj: ParamId,
    pub c_proj: ParamId,
    pub d_skip: ParamId,
    pub out_proj: ParamId,
}

/// Intermediate handles exposed for inspection.
#[derive(Clone, Copy, Debug)]
pub struct MambaVars {
    /// SSM branch output before gating, `[B, L, E*C]`.
    pub ssm: Var,
    /// Gate branch output, `[B, L, E*C]`.
    pub gate: Var,
    /// Layer output, `[B, C, H, W, D]`.
    pub out: Var,
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl MambaLayer {
    pub fn inner(&self) -> usize {
        self.channels * self.config.expand
    }

    pub fn dt_rank(&self) -> usize {
        self.config.dt_rank.unwrap_or(self.channels.div_ceil(16)).max(1)
    }

    /// Registers all parameters under `prefix` (e.g. `enc.stage2.mamba`).
    pub fn build<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, channels: usize, config: MambaConfig, rng: &mut InitRng) -> Self {
        let e = channels * config.expand;
        let n = config.state_size;
        let r = config.dt_rank.unwrap_or(channels.div_ceil(16)).max(1);
        let k = config.conv_kernel;
        let mut p = |name: &str, t: Tensor<T>| store.add(format!("{prefix}.{name}"), t);
        let norm_weight = p("norm.weight", Tensor::ones(&[channels]));
        let norm_bias = p("norm.bias", Tensor::zeros(&[channels]));
        let in_proj_main = p("in_proj_main.weight", he_normal(&[e, channels], channels, rng));
        let in_proj_gate = p("in_proj_gate.weight", he_normal(&[e, channels], channels, rng));
        let conv_kernel = p("conv1d.weight", uniform(&[e, k], 1.0 / (k as f64).sqrt(), rng));
        let delta_down = p("delta_down.weight", he_normal(&[r, e], e, rng));
        let delta_up = p("delta_up.weight", uniform(&[e, r], 1.0 / (r as f64).sqrt(), rng));
        // softplus(bias) log-uniform in [1e-3, 1e-1]
        let bias: Vec<f64> = (0..e)
            .map(|_| {
                let dt = (rng.random_range(0.0..1.0) * (0.1f64.ln() - 1e-3f64.ln()) + 1e-3f64.ln()).exp();
                inverse_softplus(dt.max(1e-4))
            })
            .collect();
        let delta_bias = p("delta_up.bias", Tensor::from_f64(&[e], &bias).expect("shape"));
        let a_log = p("A_log", Tensor::from_fn(&[e, n], |i| T::from_acc(((i % n) as f64 + 1.0).ln())));
        let b_proj = p("b_proj.weight", he_normal(&[n, e], e, rng));
        let c_proj = p("c_proj.weight", he_normal(&[n, e], e, rng));
        let d_skip = p("D", Tensor::ones(&[e]));
        let out_proj = p("out_proj.weight", he_normal(&[channels, e], e, rng));
        Self {
            channels,
            config,
            norm_weight,
            norm_bias,
            in_proj_main,
            in_proj_gate,
            conv_kernel,
            delta_down,
            delta_up,
            delta_bias,
            a_log,
            b_proj,
            c_proj,
            d_skip,
            out_proj,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        Ok(self.forward_vars(tape, store, x)?.out)
    }

    /// flatten -> layer norm -> {expand, causal conv, SiLU, scan | expand, SiLU}
    /// -> Hadamard product -> project back -> unflatten -> residual add.
    pub fn forward_vars<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<MambaVars> {
        let s = tape.shape(x).to_vec();
        if s.len() != 5 || s[1] != self.channels {
            return Err(TensorError::shape(
                "mamba",
                format!("expected [B, {}, H, W, D], got {s:?}", self.channels),
            ));
        }
        let (batch, c) = (s[0], s[1]);
        let l: usize = s[2..].iter().product();
        tape.push_scope("mamba");

        let flat = tape.reshape(x, &[batch, c, l])?;
        let tokens = tape.transpose_last2(flat)?;
        let (nw, nb) = (tape.param(store, self.norm_weight), tape.param(store, self.norm_bias));
        let normed = tape.layer_norm(tokens, nw, nb, DEFAULT_EPS)?;

        // SSM branch
        let w_main = tape.param(store, self.in_proj_main);
        let main = tape.linear(normed, w_main, None)?;
        let main_cl = tape.transpose_last2(main)?;
        let kernel = tape.param(store, self.conv_kernel);
        let conv = tape.depthwise_conv1d_causal(main_cl, kernel)?;
        let conv = tape.transpose_last2(conv)?;
        let u = tape.silu(conv);

        let wd = tape.param(store, self.delta_down);
        let low = tape.linear(u, wd, None)?;
        let (wu, bu) = (tape.param(store, self.delta_up), tape.param(store, self.delta_bias));
        let delta_raw = tape.linear(low, wu, Some(bu))?;
        let delta = tape.softplus(delta_raw);
        let wb = tape.param(store, self.b_proj);
        let b_t = tape.linear(u, wb, None)?;
        let wc = tape.param(store, self.c_proj);
        let c_t = tape.linear(u, wc, None)?;
        let a_log = tape.param(store, self.a_log);
        let d_skip = tape.param(store, self.d_skip);
        let ssm = selective_scan_var(tape, [u, delta, a_log, b_t, c_t, d_skip])?;

        // gate branch
        let w_gate = tape.param(store, self.in_proj_gate);
        let gate = tape.linear(normed, w_gate, None)?;
        let gate = tape.silu(gate);

        let merged = tape.mul(ssm, gate)?;
        let w_out = tape.param(store, self.out_proj);
        let projected = tape.linear(merged, w_out, None)?;
        let channels_first = tape.transpose_last2(projected)?;
        let restored = tape.reshape(channels_first, &s)?;
        let out = tape.add(restored, x)?;
        tape.pop_scope();
        Ok(MambaVars { ssm, gate, out })
    }

    /// Tape-free forward on a concrete feature map.
    pub fn apply<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, store, xv)?;
        Ok(tape.value(out)?.clone())
    }

    pub fn param_ids(&self) -> [ParamId; 13] {
        [
            self.norm_weight,
            self.norm_bias,
            self.in_proj_main,
            self.in_proj_gate,
            self.conv_kernel,
            self.delta_down,
            self.delta_up,
            self.delta_bias,
            self.a_log,
            self.b_proj,
            self.c_proj,
            self.d_skip,
            self.out_proj,
        ]
    }
}

/// Records a selective scan on the tape. Inputs are `(u, delta, a_log, B, C, D)`
/// with the state matrix parameterized as `A = -exp(a_log)`.
pub fn selective_scan_var<T: Scalar>(tape: &mut Tape<T>, inputs: [Var; 6]) -> Result<Var> {
    let [u, delta, a_log, b_t, c_t, d_skip] = inputs;
    scan_dims(
        tape.shape(u),
        tape.shape(delta),
        tape.shape(a_log),
        tape.shape(b_t),
        tape.shape(c_t),
        tape.shape(d_skip),
    )?;
    let shape = tape.shape(u).to_vec();
    tape.push_scope("ssm");
    let out = if tape.is_shape_only() {
        tape.custom(&inputs, shape, None, Box::new(ShapeOnlyScan))
    } else {
        let vals = [
            tape.value(u)?,
            tape.value(delta)?,
            tape.value(a_log)?,
            tape.value(b_t)?,
            tape.value(c_t)?,
            tape.value(d_skip)?,
        ];
        let (y, op) = SelectiveScanOp::forward(vals)?;
        tape.custom(&inputs, shape, Some(y), Box::new(op))
    };
    tape.pop_scope();
    Ok(out)
}

/// Placeholder adjoint for shape-only tapes, which never run backward.
struct ShapeOnlyScan;

impl<T: Scalar> crate::autodiff::CustomOp<T> for ShapeOnlyScan {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, _: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![None; inputs.len()]
    }
}
