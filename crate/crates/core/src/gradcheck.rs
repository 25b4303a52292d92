//! Central finite-difference gradient checks.
//!
//! The analytic gradient is taken in the storage type under test while the
//! numerical derivative is always evaluated in `f64` at the same (rounded)
//! point, so 32-bit backward passes can be checked without 32-bit
//! finite-difference noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A scalar function of some input tensors, expressible at any precision.
pub trait InputProbe {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, inputs: &[Var]) -> Result<Var>;
}

/// A scalar function of a parameter store.
pub trait ParamProbe {
    fn loss<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> Result<Var>;
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `|analytic - numeric|_2 / |numeric|_2` over all checked components.
    pub rel_err: f64,
    pub max_abs_err: f64,
    pub numeric_norm: f64,
    pub components: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.rel_err.is_finite() && self.rel_err < tol
    }
}

fn summarize(analytic: &[f64], numeric: &[f64]) -> GradCheck {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|n| n * n).sum::<f64>().sqrt();
    let max_abs_err = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let rel_err = if nn.max(na) < 1e-12 { diff } else { diff / nn.max(na) };
    GradCheck { rel_err, max_abs_err, numeric_norm: nn, components: numeric.len() }
}

fn eval_inputs<P: InputProbe>(probe: &P, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let l = probe.loss(&mut tape, &vars)?;
    Ok(tape.value(l)?.data()[0])
}

/// Checks d(loss)/d(input) for every element of every input.
pub fn check_inputs<T: Scalar, P: InputProbe>(probe: &P, inputs: &[Tensor<f64>], step: f64) -> Result<GradCheck> {
    // round the evaluation point through T so both sides see the same inputs
    let point: Vec<Tensor<f64>> = inputs.iter().map(|t| t.cast::<T>().cast::<f64>()).collect();
    let mut tape = Tape::<T>::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.leaf(t.cast())).collect();
    let l = probe.loss(&mut tape, &vars)?;
    let grads = tape.backward(l)?;
    let mut analytic = Vec::new();
    for (v, t) in vars.iter().zip(&point) {
        match grads.get(*v) {
            Some(g) => analytic.extend(g.to_f64_vec()),
            None => analytic.extend(std::iter::repeat_n(0.0, t.numel())),
        }
    }
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut probe_point = point.clone();
    for i in 0..point.len() {
        for j in 0..point[i].numel() {
            let x0 = point[i].data()[j];
            probe_point[i].data_mut()[j] = x0 + step;
            let plus = eval_inputs(probe, &probe_point)?;
            probe_point[i].data_mut()[j] = x0 - step;
            let minus = eval_inputs(probe, &probe_point)?;
            probe_point[i].data_mut()[j] = x0;
            numeric.push((plus - minus) / (2.0 * step));
        }
    }
    Ok(summarize(&analytic, &numeric))
}

fn eval_params<P: ParamProbe>(probe: &P, store: &ParamStore<f64>) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let l = probe.loss(&mut tape, store)?;
    Ok(tape.value(l)?.data()[0])
}

/// Analytic parameter gradient of `probe` at `store` (converted to `T`), as f64.
pub fn param_gradient<T: Scalar, P: ParamProbe>(probe: &P, store: &ParamStore<f64>) -> Result<Vec<f64>> {
    let mut st = store.cast::<T>();
    st.zero_grad();
    let mut tape = Tape::<T>::new();
    let l = probe.loss(&mut tape, &st)?;
    let grads = tape.backward(l)?;
    tape.accumulate_param_grads(&grads, &mut st);
    Ok(st.flat_grads().iter().map(|v| v.to_acc()).collect())
}

/// Directional-derivative check for models too large for per-element
/// differencing. Each probe direction is the normalized analytic gradient
/// plus an independent random unit vector, so the check covers both the
/// gradient's magnitude and off-gradient components; `directions` such
/// probes are compared against f64 central differences.
pub fn check_params<T: Scalar, P: ParamProbe>(
    probe: &P,
    store: &ParamStore<f64>,
    step: f64,
    directions: usize,
    seed: u64,
) -> Result<GradCheck> {
    let mut base = store.clone();
    let rounded: Vec<f64> = base.flat_values().iter().map(|&v| T::from_acc(v).to_acc()).collect();
    base.set_flat_values(&rounded);
    let g = param_gradient::<T, P>(probe, &base)?;
    let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-30);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut shifted = base.clone();
    for _ in 0..directions {
        let r: Vec<f64> = (0..g.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-30);
        let dir: Vec<f64> = g.iter().zip(&r).map(|(gi, ri)| gi / gnorm + ri / rnorm).collect();
        analytic.push(g.iter().zip(&dir).map(|(a, b)| a * b).sum());
        let plus: Vec<f64> = rounded.iter().zip(&dir).map(|(x, d)| x + step * d).collect();
        shifted.set_flat_values(&plus);
        let lp = eval_params(probe, &shifted)?;
        let minus: Vec<f64> = rounded.iter().zip(&dir).map(|(x, d)| x - step * d).collect();
        shifted.set_flat_values(&minus);
        let lm = eval_params(probe, &shifted)?;
        numeric.push((lp - lm) / (2.0 * step));
    }
    Ok(summarize(&analytic, &numeric))
}

/// Random tensor with standard normal entries scaled by `scale`.
pub fn random_tensor(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}
