use crate::error::{Result, TensorError};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

pub fn linear_shape(x: &[usize], w: &[usize], b: Option<&[usize]>) -> Result<Vec<usize>> {
    if w.len() != 2 || x.last() != Some(&w[1]) {
        return Err(TensorError::shape("linear", format!("input {x:?} vs weight {w:?}")));
    }
    if let Some(b) = b {
        if b != [w[0]] {
            return Err(TensorError::shape("linear", format!("bias {b:?} vs {} outputs", w[0])));
        }
    }
    let mut out = x.to_vec();
    *out.last_mut().unwrap() = w[0];
    Ok(out)
}

/// Affine map over the last axis: `y = x W^T + b`, `W: [out, in]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let shape = linear_shape(x.shape(), w.shape(), b.map(|b| b.shape()))?;
    let (cout, cin) = (w.shape()[0], w.shape()[1]);
    let rows = x.numel() / cin.max(1);
    let mut out = vec![T::zero(); rows * cout];
    gemm(T::one(), MatRef::new(x.data(), rows, cin), MatRef::t(w.data(), cout, cin), T::zero(), &mut out);
    if let Some(b) = b {
        for row in out.chunks_exact_mut(cout) {
            row.iter_mut().zip(b.data()).for_each(|(v, &bv)| *v += bv);
        }
    }
    Tensor::new(&shape, out)
}

pub(crate) fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (cout, cin) = (w.shape()[0], w.shape()[1]);
    let rows = x.numel() / cin.max(1);
    let dx = need_dx.then(|| {
        let mut dx = vec![T::zero(); x.numel()];
        gemm(T::one(), MatRef::new(dy.data(), rows, cout), MatRef::new(w.data(), cout, cin), T::zero(), &mut dx);
        Tensor::new(x.shape(), dx).expect("shape")
    });
    let mut dw = vec![T::zero(); cout * cin];
    gemm(T::one(), MatRef::t(dy.data(), rows, cout), MatRef::new(x.data(), rows, cin), T::zero(), &mut dw);
    let mut db = vec![0.0f64; cout];
    for row in dy.data().chunks_exact(cout) {
        db.iter_mut().zip(row).for_each(|(a, v)| *a += v.to_acc());
    }
    (
        dx,
        Tensor::new(w.shape(), dw).expect("shape"),
        Tensor::new(&[cout], db.into_iter().map(T::from_acc).collect()).expect("shape"),
    )
}
