//! Instance normalization over spatial axes and layer normalization over the
//! last axis. Both reduce in 64-bit and share one backward kernel.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-group mean and reciprocal standard deviation saved for backward.
#[derive(Clone, Debug)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub rstd: Vec<f64>,
}

/// Normalizes `groups` contiguous runs of `len` values; the affine index of
/// group `g` is `g % channels` with `stride` 1 (instance norm) or per element
/// (layer norm, see [`layer_norm`]).
fn group_stats<T: Scalar>(data: &[T], len: usize, eps: f64) -> NormStats {
    let groups = data.len() / len.max(1);
    let mut mean = Vec::with_capacity(groups);
    let mut rstd = Vec::with_capacity(groups);
    for chunk in data.chunks_exact(len) {
        let m = chunk.iter().map(|v| v.to_acc()).sum::<f64>() / len as f64;
        let var = chunk.iter().map(|v| (v.to_acc() - m).powi(2)).sum::<f64>() / len as f64;
        mean.push(m);
        rstd.push(1.0 / (var + eps).sqrt());
    }
    NormStats { mean, rstd }
}

pub fn instance_norm_check(x: &[usize], gamma: &[usize], beta: &[usize]) -> Result<()> {
    if x.len() < 3 {
        return Err(TensorError::shape("instance_norm", format!("need [B, C, spatial...], got {x:?}")));
    }
    if gamma != [x[1]] || beta != [x[1]] {
        return Err(TensorError::shape(
            "instance_norm",
            format!("affine {gamma:?}/{beta:?} vs {} channels", x[1]),
        ));
    }
    Ok(())
}

/// `y = gamma * (x - mean) / sqrt(var + eps) + beta` per (batch item, channel).
pub fn instance_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, NormStats)> {
    instance_norm_check(x.shape(), gamma.shape(), beta.shape())?;
    let channels = x.shape()[1];
    let spatial: usize = x.shape()[2..].iter().product();
    let stats = group_stats(x.data(), spatial, eps);
    let mut out = Vec::with_capacity(x.numel());
    for (g, chunk) in x.data().chunks_exact(spatial).enumerate() {
        let c = g % channels;
        let scale = stats.rstd[g] * gamma.data()[c].to_acc();
        let shift = beta.data()[c].to_acc() - stats.mean[g] * scale;
        out.extend(chunk.iter().map(|v| T::from_acc(v.to_acc() * scale + shift)));
    }
    Ok((Tensor::new(x.shape(), out)?, stats))
}

pub(crate) fn instance_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &NormStats,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let channels = x.shape()[1];
    let spatial: usize = x.shape()[2..].iter().product();
    let mut dx = Vec::with_capacity(x.numel());
    let mut dgamma = vec![0.0f64; channels];
    let mut dbeta = vec![0.0f64; channels];
    for (g, (xc, dyc)) in x.data().chunks_exact(spatial).zip(dy.data().chunks_exact(spatial)).enumerate() {
        let c = g % channels;
        let (m, r) = (stats.mean[g], stats.rstd[g]);
        let gam = gamma.data()[c].to_acc();
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for (&xv, &dv) in xc.iter().zip(dyc) {
            let xhat = (xv.to_acc() - m) * r;
            let d = dv.to_acc();
            sum_dy += d;
            sum_dy_xhat += d * xhat;
        }
        dgamma[c] += sum_dy_xhat;
        dbeta[c] += sum_dy;
        let n = spatial as f64;
        let mean_d = sum_dy / n;
        let mean_dx = sum_dy_xhat / n;
        dx.extend(xc.iter().zip(dyc).map(|(&xv, &dv)| {
            let xhat = (xv.to_acc() - m) * r;
            T::from_acc(gam * r * (dv.to_acc() - mean_d - xhat * mean_dx))
        }));
    }
    (
        Tensor::new(x.shape(), dx).expect("shape"),
        Tensor::new(&[channels], dgamma.into_iter().map(T::from_acc).collect()).expect("shape"),
        Tensor::new(&[channels], dbeta.into_iter().map(T::from_acc).collect()).expect("shape"),
    )
}

pub fn layer_norm_check(x: &[usize], gamma: &[usize], beta: &[usize]) -> Result<()> {
    let Some(&c) = x.last() else {
        return Err(TensorError::shape("layer_norm", "rank-0 input"));
    };
    if gamma != [c] || beta != [c] {
        return Err(TensorError::shape("layer_norm", format!("affine {gamma:?}/{beta:?} vs last axis {c}")));
    }
    Ok(())
}

/// Normalizes every token (last axis) to zero mean and unit variance, then
/// applies a per-channel affine map.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, NormStats)> {
    layer_norm_check(x.shape(), gamma.shape(), beta.shape())?;
    let c = *x.shape().last().unwrap();
    let stats = group_stats(x.data(), c, eps);
    let mut out = Vec::with_capacity(x.numel());
    for (t, chunk) in x.data().chunks_exact(c).enumerate() {
        let (m, r) = (stats.mean[t], stats.rstd[t]);
        out.extend(
            chunk
                .iter()
                .zip(gamma.data().iter().zip(beta.data()))
                .map(|(v, (g, b))| T::from_acc((v.to_acc() - m) * r * g.to_acc() + b.to_acc())),
        );
    }
    Ok((Tensor::new(x.shape(), out)?, stats))
}

pub(crate) fn layer_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &NormStats,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = *x.shape().last().unwrap();
    let mut dx = Vec::with_capacity(x.numel());
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    let mut dxhat = vec![0.0f64; c];
    for (t, (xc, dyc)) in x.data().chunks_exact(c).zip(dy.data().chunks_exact(c)).enumerate() {
        let (m, r) = (stats.mean[t], stats.rstd[t]);
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for j in 0..c {
            let xhat = (xc[j].to_acc() - m) * r;
            let d = dyc[j].to_acc();
            dgamma[j] += d * xhat;
            dbeta[j] += d;
            dxhat[j] = d * gamma.data()[j].to_acc();
            sum_d += dxhat[j];
            sum_dx += dxhat[j] * xhat;
        }
        let n = c as f64;
        for j in 0..c {
            let xhat = (xc[j].to_acc() - m) * r;
            dx.push(T::from_acc(r * (dxhat[j] - sum_d / n - xhat * sum_dx / n)));
        }
    }
    (
        Tensor::new(x.shape(), dx).expect("shape"),
        Tensor::new(&[c], dgamma.into_iter().map(T::from_acc).collect()).expect("shape"),
        Tensor::new(&[c], dbeta.into_iter().map(T::from_acc).collect()).expect("shape"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(c: usize) -> (Tensor<f64>, Tensor<f64>) {
        (Tensor::ones(&[c]), Tensor::zeros(&[c]))
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let x = Tensor::<f64>::full(&[1, 2, 2, 2, 2], 4.0);
        let (g, b) = affine(2);
        let (y, _) = instance_norm(&x, &g, &b, DEFAULT_EPS).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_level_channel_maps_to_unit_values() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 1, 1, 2], &[0.0, 2.0]).unwrap();
        let (g, b) = affine(1);
        let (y, _) = instance_norm(&x, &g, &b, 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
        let (y, _) = instance_norm(&x, &g, &b, DEFAULT_EPS).unwrap();
        assert!((y.data()[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn zero_gamma_yields_beta() {
        let x = Tensor::<f32>::from_fn(&[2, 1, 3, 1, 1], |i| i as f32 * 1.7);
        let g = Tensor::zeros(&[1]);
        let b = Tensor::full(&[1], 0.25);
        let (y, _) = instance_norm(&x, &g, &b, DEFAULT_EPS).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn instance_norm_moments() {
        let x = Tensor::<f32>::from_fn(&[2, 3, 2, 3, 4], |i| ((i * 37) % 11) as f32 * 0.3 - 1.0);
        let (g, b) = (Tensor::ones(&[3]), Tensor::zeros(&[3]));
        let (y, _) = instance_norm(&x, &g, &b, DEFAULT_EPS).unwrap();
        for chunk in y.data().chunks_exact(24) {
            let m: f64 = chunk.iter().map(|&v| v as f64).sum::<f64>() / 24.0;
            let v: f64 = chunk.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / 24.0;
            assert!(m.abs() < 1e-4 && (v - 1.0).abs() < 1e-4, "mean {m} var {v}");
        }
    }

    #[test]
    fn layer_norm_token_example() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 2], &[1.0, 3.0]).unwrap();
        let (g, b) = affine(2);
        let (y, _) = layer_norm(&x, &g, &b, 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
        let c = Tensor::<f64>::full(&[1, 3, 2], 7.0);
        let (y, _) = layer_norm(&c, &g, &b, DEFAULT_EPS).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_shape_checked() {
        let x = Tensor::<f32>::zeros(&[1, 2, 2]);
        assert!(layer_norm(&x, &Tensor::ones(&[3]), &Tensor::zeros(&[3]), 1e-5).is_err());
    }
}
