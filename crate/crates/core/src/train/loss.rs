use crate::autodiff::{CustomOp, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::{Dims3, Tensor};
use crate::train::TrainError;

/// Additive smoothing of the soft Dice ratio; keeps classes absent from a
/// sample from dominating the loss.
pub const DICE_SMOOTH: f64 = 1.0;

/// Halving weights `1, 1/2, 1/4, ...` normalized to sum to one.
pub fn deep_supervision_weights(levels: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..levels).map(|i| 0.5f64.powi(i as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Nearest-neighbour downsampling of a `[B, Z, Y, X]` label batch.
pub fn downsample_labels(labels: &[u8], batch: usize, full: Dims3, out: Dims3) -> Vec<u8> {
    if full == out {
        return labels.to_vec();
    }
    let nf: usize = full.iter().product();
    let mut res = Vec::with_capacity(batch * out.iter().product::<usize>());
    for b in 0..batch {
        for z in 0..out[0] {
            let sz = z * full[0] / out[0];
            for y in 0..out[1] {
                let sy = y * full[1] / out[1];
                for x in 0..out[2] {
                    let sx = x * full[2] / out[2];
                    res.push(labels[b * nf + (sz * full[1] + sy) * full[2] + sx]);
                }
            }
        }
    }
    res
}

/// Components of the loss at one scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiceCeParts {
    pub cross_entropy: f64,
    /// `1 - mean soft Dice` over samples and foreground classes.
    pub dice_term: f64,
}

impl DiceCeParts {
    pub fn total(&self) -> f64 {
        self.cross_entropy + self.dice_term
    }
}

struct Stats {
    probs: Vec<f64>,
    parts: DiceCeParts,
    /// Per (sample, foreground class): intersection and summed sizes.
    inter: Vec<f64>,
    sizes: Vec<f64>,
}

fn stats<T: Scalar>(logits: &Tensor<T>, target: &[u8]) -> Stats {
    let s = logits.shape();
    let (batch, k) = (s[0], s[1]);
    let v: usize = s[2..].iter().product();
    let z = logits.data();
    let mut probs = vec![0.0; z.len()];
    let mut ce = 0.0;
    let mut inter = vec![0.0; batch * (k - 1)];
    let mut sizes = vec![0.0; batch * (k - 1)];
    for b in 0..batch {
        for i in 0..v {
            let at = |c: usize| (b * k + c) * v + i;
            let m = (0..k).map(|c| z[at(c)].to_acc()).fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = (0..k).map(|c| (z[at(c)].to_acc() - m).exp()).sum();
            let y = target[b * v + i] as usize;
            ce -= z[at(y)].to_acc() - m - denom.ln();
            for c in 0..k {
                let p = (z[at(c)].to_acc() - m).exp() / denom;
                probs[at(c)] = p;
                if c > 0 {
                    let j = b * (k - 1) + c - 1;
                    sizes[j] += p;
                    if y == c {
                        inter[j] += p;
                        sizes[j] += 1.0;
                    }
                }
            }
        }
    }
    let dice_mean = inter
        .iter()
        .zip(&sizes)
        .map(|(&i, &s)| (2.0 * i + DICE_SMOOTH) / (s + DICE_SMOOTH))
        .sum::<f64>()
        / inter.len().max(1) as f64;
    let parts = DiceCeParts { cross_entropy: ce / (batch * v) as f64, dice_term: 1.0 - dice_mean };
    Stats { probs, parts, inter, sizes }
}

/// Loss parts without a tape.
pub fn dice_ce_parts<T: Scalar>(logits: &Tensor<T>, target: &[u8]) -> DiceCeParts {
    stats(logits, target).parts
}

struct DiceCeOp {
    target: Vec<u8>,
}

impl<T: Scalar> CustomOp<T> for DiceCeOp {
    fn name(&self) -> &'static str {
        "dice_ce"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>, _needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let logits = inputs[0];
        let s = logits.shape();
        let (batch, k) = (s[0], s[1]);
        let v: usize = s[2..].iter().product();
        let st = stats(logits, &self.target);
        let g = grad.data()[0].to_acc();
        let n_ce = (batch * v) as f64;
        let n_dice = (batch * (k - 1)) as f64;
        let mut dz = vec![T::zero(); logits.numel()];
        let mut dp = vec![0.0; k];
        for b in 0..batch {
            for i in 0..v {
                let at = |c: usize| (b * k + c) * v + i;
                let y = self.target[b * v + i] as usize;
                let mut dot = 0.0;
                for c in 1..k {
                    let j = b * (k - 1) + c - 1;
                    let den = st.sizes[j] + DICE_SMOOTH;
                    let yc = if y == c { 1.0 } else { 0.0 };
                    dp[c] = -(2.0 * yc * den - (2.0 * st.inter[j] + DICE_SMOOTH)) / (den * den) / n_dice;
                    dot += st.probs[at(c)] * dp[c];
                }
                dp[0] = 0.0;
                for c in 0..k {
                    let p = st.probs[at(c)];
                    let onehot = if y == c { 1.0 } else { 0.0 };
                    let d = (p - onehot) / n_ce + p * (dp[c] - dot);
                    dz[at(c)] = T::from_acc(g * d);
                }
            }
        }
        vec![Some(Tensor::new(s, dz).expect("shape"))]
    }
}

fn check_labels(target: &[u8], n_classes: usize) -> Result<(), TrainError> {
    match target.iter().find(|&&l| l as usize >= n_classes) {
        Some(&label) => Err(TrainError::Label { label, n_classes }),
        None => Ok(()),
    }
}

/// Soft Dice over foreground classes plus voxel cross-entropy for one logit map
/// `[B, K, ...]` against labels `[B, ...]`.
pub fn dice_ce_level<T: Scalar>(tape: &mut Tape<T>, logits: Var, target: &[u8]) -> Result<Var, TrainError> {
    let s = tape.shape(logits).to_vec();
    let n: usize = s.iter().product::<usize>() / s.get(1).copied().unwrap_or(1).max(1);
    if s.len() < 3 || s[1] < 2 || target.len() != n {
        return Err(TrainError::Config(format!("dice_ce: logits {s:?} vs {} labels", target.len())));
    }
    check_labels(target, s[1])?;
    let value = if tape.is_shape_only() {
        None
    } else {
        let total = dice_ce_parts(tape.value(logits)?, target).total();
        Some(Tensor::scalar(T::from_acc(total)))
    };
    Ok(tape.custom(&[logits], vec![], value, Box::new(DiceCeOp { target: target.to_vec() })))
}

/// Weighted deep-supervision loss. `mask` holds `[B, Z, Y, X]` labels at the
/// resolution of `pyramid[0]`.
pub fn dice_ce_loss<T: Scalar>(tape: &mut Tape<T>, pyramid: &[Var], mask: &[u8]) -> Result<Var, TrainError> {
    let Some(&first) = pyramid.first() else {
        return Err(TrainError::Config("empty logit pyramid".into()));
    };
    let s0 = tape.shape(first).to_vec();
    let batch = s0[0];
    let full = [s0[2], s0[3], s0[4]];
    let weights = deep_supervision_weights(pyramid.len());
    let mut total: Option<Var> = None;
    for (&logits, w) in pyramid.iter().zip(weights) {
        let s = tape.shape(logits).to_vec();
        let target = downsample_labels(mask, batch, full, [s[2], s[3], s[4]]);
        let level = dice_ce_level(tape, logits, &target)?;
        let scaled = tape.scale(level, w);
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
    }
    Ok(total.expect("non-empty pyramid"))
}
