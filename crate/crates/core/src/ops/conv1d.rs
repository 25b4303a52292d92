use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn depthwise_conv1d_check(x: &[usize], kernel: &[usize]) -> Result<()> {
    if x.len() != 3 || kernel.len() != 2 || kernel[0] != x[1] || kernel[1] == 0 {
        return Err(TensorError::shape(
            "depthwise_conv1d_causal",
            format!("input {x:?} must be [B, C, L] with kernel [C, k], got kernel {kernel:?}"),
        ));
    }
    Ok(())
}

/// Causal per-channel filter: `y[t] = sum_j k[j] * x[t - (k-1) + j]`, zero left padding.
pub fn depthwise_conv1d_causal<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    depthwise_conv1d_check(x.shape(), kernel.shape())?;
    let (c, l) = (x.shape()[1], x.shape()[2]);
    let k = kernel.shape()[1];
    let mut out = vec![T::zero(); x.numel()];
    for (row, (xr, yr)) in x.data().chunks_exact(l).zip(out.chunks_exact_mut(l)).enumerate() {
        let kr = &kernel.data()[(row % c) * k..(row % c + 1) * k];
        for (t, y) in yr.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (j, &kv) in kr.iter().enumerate() {
                let src = t as isize - (k - 1) as isize + j as isize;
                if src >= 0 {
                    acc += kv * xr[src as usize];
                }
            }
            *y = acc;
        }
    }
    Tensor::new(x.shape(), out)
}

pub(crate) fn depthwise_conv1d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (c, l) = (x.shape()[1], x.shape()[2]);
    let k = kernel.shape()[1];
    let mut dx = vec![T::zero(); x.numel()];
    let mut dk = vec![0.0f64; c * k];
    for (row, ((xr, dyr), dxr)) in x
        .data()
        .chunks_exact(l)
        .zip(dy.data().chunks_exact(l))
        .zip(dx.chunks_exact_mut(l))
        .enumerate()
    {
        let ch = row % c;
        let kr = &kernel.data()[ch * k..(ch + 1) * k];
        for (t, &d) in dyr.iter().enumerate() {
            for (j, &kv) in kr.iter().enumerate() {
                let src = t as isize - (k - 1) as isize + j as isize;
                if src >= 0 {
                    dxr[src as usize] += kv * d;
                    dk[ch * k + j] += xr[src as usize].to_acc() * d.to_acc();
                }
            }
        }
    }
    (
        Tensor::new(x.shape(), dx).expect("shape"),
        Tensor::new(kernel.shape(), dk.into_iter().map(T::from_acc).collect()).expect("shape"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_convolution() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 3], &[1.0, 2.0, 3.0]).unwrap();
        let k = Tensor::from_f64(&[1, 2], &[1.0, 1.0]).unwrap();
        assert_eq!(depthwise_conv1d_causal(&x, &k).unwrap().data(), &[1.0, 3.0, 5.0]);
    }

    #[test]
    fn last_tap_is_identity() {
        let x = Tensor::<f32>::from_fn(&[2, 3, 7], |i| (i as f32).sin());
        let k = Tensor::from_fn(&[3, 4], |i| if i % 4 == 3 { 1.0 } else { 0.0 });
        assert_eq!(depthwise_conv1d_causal(&x, &k).unwrap(), x);
    }

    #[test]
    fn causal_perturbation() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 9], |i| i as f64 * 0.1);
        let k = Tensor::from_fn(&[2, 4], |i| 0.3 + i as f64);
        let base = depthwise_conv1d_causal(&x, &k).unwrap();
        let mut x2 = x.clone();
        x2.set(&[0, 1, 5], 100.0);
        let pert = depthwise_conv1d_causal(&x2, &k).unwrap();
        for t in 0..5 {
            assert_eq!(base.at(&[0, 1, t]), pert.at(&[0, 1, t]));
        }
        assert_ne!(base.at(&[0, 1, 5]), pert.at(&[0, 1, 5]));
    }
}
