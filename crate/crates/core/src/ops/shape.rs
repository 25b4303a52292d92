//! Layout ops: channel concatenation, last-two-axes transpose, channel softmax.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn concat_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() < 2 || a.len() != b.len() || a[0] != b[0] || a[2..] != b[2..] {
        return Err(TensorError::shape("concat_channels", format!("{a:?} vs {b:?}")));
    }
    let mut out = a.to_vec();
    out[1] += b[1];
    Ok(out)
}

/// Concatenates along axis 1.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = concat_shape(a.shape(), b.shape())?;
    let batch = a.shape()[0];
    let (na, nb) = (a.numel() / batch, b.numel() / batch);
    let mut out = Vec::with_capacity(a.numel() + b.numel());
    for i in 0..batch {
        out.extend_from_slice(&a.data()[i * na..(i + 1) * na]);
        out.extend_from_slice(&b.data()[i * nb..(i + 1) * nb]);
    }
    Tensor::new(&shape, out)
}

pub(crate) fn split_channels<T: Scalar>(d: &Tensor<T>, a_shape: &[usize], b_shape: &[usize]) -> (Tensor<T>, Tensor<T>) {
    let batch = a_shape[0];
    let na: usize = a_shape[1..].iter().product();
    let nb: usize = b_shape[1..].iter().product();
    let mut da = Vec::with_capacity(batch * na);
    let mut db = Vec::with_capacity(batch * nb);
    for chunk in d.data().chunks_exact(na + nb) {
        da.extend_from_slice(&chunk[..na]);
        db.extend_from_slice(&chunk[na..]);
    }
    (Tensor::new(a_shape, da).expect("shape"), Tensor::new(b_shape, db).expect("shape"))
}

pub fn transpose_last2_shape(x: &[usize]) -> Result<Vec<usize>> {
    if x.len() < 2 {
        return Err(TensorError::shape("transpose", format!("rank {} < 2", x.len())));
    }
    let mut s = x.to_vec();
    let r = s.len();
    s.swap(r - 2, r - 1);
    Ok(s)
}

/// `[..., M, N] -> [..., N, M]`.
pub fn transpose_last2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = transpose_last2_shape(x.shape())?;
    let r = x.rank();
    let (m, n) = (x.shape()[r - 2], x.shape()[r - 1]);
    let mut out = vec![T::zero(); x.numel()];
    const TILE: usize = 32;
    for (src, dst) in x.data().chunks_exact(m * n).zip(out.chunks_exact_mut(m * n)) {
        for i0 in (0..m).step_by(TILE) {
            for j0 in (0..n).step_by(TILE) {
                for i in i0..(i0 + TILE).min(m) {
                    for j in j0..(j0 + TILE).min(n) {
                        dst[j * m + i] = src[i * n + j];
                    }
                }
            }
        }
    }
    Tensor::new(&shape, out)
}

/// Softmax over axis 1 of `[B, K, ...]`.
pub fn softmax_channels<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.rank() < 2 {
        return Err(TensorError::shape("softmax_channels", format!("{:?}", logits.shape())));
    }
    let k = logits.shape()[1];
    let v: usize = logits.shape()[2..].iter().product();
    let mut out = vec![T::zero(); logits.numel()];
    for (src, dst) in logits.data().chunks_exact(k * v).zip(out.chunks_exact_mut(k * v)) {
        for p in 0..v {
            let mx = (0..k).map(|c| src[c * v + p]).fold(T::neg_infinity(), T::max);
            let mut z = 0.0f64;
            for c in 0..k {
                let e = (src[c * v + p] - mx).exp();
                dst[c * v + p] = e;
                z += e.to_acc();
            }
            let inv = T::from_acc(1.0 / z);
            for c in 0..k {
                dst[c * v + p] *= inv;
            }
        }
    }
    Tensor::new(logits.shape(), out)
}

pub(crate) fn softmax_channels_backward<T: Scalar>(p: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let k = p.shape()[1];
    let v: usize = p.shape()[2..].iter().product();
    let mut out = vec![T::zero(); p.numel()];
    for ((pp, dd), oo) in p.data().chunks_exact(k * v).zip(dy.data().chunks_exact(k * v)).zip(out.chunks_exact_mut(k * v)) {
        for i in 0..v {
            let dot: f64 = (0..k).map(|c| pp[c * v + i].to_acc() * dd[c * v + i].to_acc()).sum();
            for c in 0..k {
                oo[c * v + i] = T::from_acc(pp[c * v + i].to_acc() * (dd[c * v + i].to_acc() - dot));
            }
        }
    }
    Tensor::new(p.shape(), out).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_channel_count() {
        let a = Tensor::<f32>::zeros(&[2, 2, 3, 1, 1]);
        let b = Tensor::<f32>::ones(&[2, 3, 3, 1, 1]);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 5, 3, 1, 1]);
        assert_eq!(c.at(&[1, 1, 2, 0, 0]), 0.0);
        assert_eq!(c.at(&[1, 2, 0, 0, 0]), 1.0);
        let (da, db) = split_channels(&c, a.shape(), b.shape());
        assert_eq!((da, db), (a, b));
    }

    #[test]
    fn transpose_roundtrip() {
        let x = Tensor::<f64>::from_fn(&[2, 37, 45], |i| i as f64);
        let t = transpose_last2(&x).unwrap();
        assert_eq!(t.at(&[1, 5, 3]), x.at(&[1, 3, 5]));
        assert_eq!(transpose_last2(&t).unwrap(), x);
    }

    #[test]
    fn equal_logits_give_uniform() {
        let x = Tensor::<f32>::full(&[1, 3, 2, 2, 2], 0.7);
        let p = softmax_channels(&x).unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-7));
    }
}
