use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Negative slope used throughout the network.
pub const LEAKY_SLOPE: f64 = 0.01;

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::lit(slope);
    x.map(|v| if v >= T::zero() { v } else { v * s })
}

pub(crate) fn leaky_relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::lit(slope);
    zip_map(x, dy, |v, d| if v >= T::zero() { d } else { d * s })
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Elementwise sigmoid through the batched exponential. Overflow-free: the
/// exponent is clamped, so the result saturates at 0 and 1.
fn sigmoid_all<T: Scalar>(x: &[T]) -> Vec<T> {
    let mut e: Vec<T> = x.iter().map(|&v| -v).collect();
    T::exp_in_place(&mut e);
    for v in e.iter_mut() {
        *v = T::one() / (T::one() + *v);
    }
    e
}

pub fn silu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut s = sigmoid_all(x.data());
    for (o, &v) in s.iter_mut().zip(x.data()) {
        *o = *o * v;
    }
    Tensor::new(x.shape(), s).expect("shape")
}

pub(crate) fn silu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut s = sigmoid_all(x.data());
    for ((o, &v), &d) in s.iter_mut().zip(x.data()).zip(dy.data()) {
        *o = d * *o * (T::one() + v * (T::one() - *o));
    }
    Tensor::new(x.shape(), s).expect("shape")
}

/// `log(1 + e^x)` without overflow for large `x`.
#[inline]
pub fn softplus_scalar<T: Scalar>(v: T) -> T {
    if v > T::lit(20.0) {
        v
    } else {
        v.exp().ln_1p()
    }
}

pub fn softplus<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(softplus_scalar)
}

pub(crate) fn softplus_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut s = sigmoid_all(x.data());
    for (o, &d) in s.iter_mut().zip(dy.data()) {
        *o = *o * d;
    }
    Tensor::new(x.shape(), s).expect("shape")
}

pub(crate) fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_values() {
        let x = Tensor::<f64>::from_f64(&[3], &[-1.0, 0.0, 2.5]).unwrap();
        let y = leaky_relu(&x, LEAKY_SLOPE);
        assert_eq!(y.data(), &[-0.01, 0.0, 2.5]);
    }

    #[test]
    fn silu_at_zero_and_large() {
        let x = Tensor::<f32>::from_f64(&[3], &[0.0, 30.0, -30.0]).unwrap();
        let y = silu(&x);
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 30.0).abs() < 1e-5);
        assert!(y.data()[2].abs() < 1e-10);
    }

    #[test]
    fn softplus_is_positive_and_stable() {
        let x = Tensor::<f32>::from_f64(&[3], &[-50.0, 0.0, 100.0]).unwrap();
        let y = softplus(&x);
        assert!(y.data()[0] > 0.0);
        assert!((y.data()[1] - std::f32::consts::LN_2).abs() < 1e-6);
        assert_eq!(y.data()[2], 100.0);
    }
}
