//! Seeded parameter initializers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub type InitRng = ChaCha8Rng;

/// Normal(0, sqrt(2 / fan_in)).
pub fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut InitRng) -> Tensor<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        T::from_acc(z * std)
    })
}

/// Uniform(-bound, bound).
pub fn uniform<T: Scalar>(shape: &[usize], bound: f64, rng: &mut InitRng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_acc(rng.random_range(-bound..=bound)))
}
