use crate::autodiff::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::TrainError;

/// `initial * (1 - epoch / max_epochs)^exponent`.
pub fn poly_lr(initial: f64, epoch: usize, max_epochs: usize, exponent: f64) -> Result<f64, TrainError> {
    if epoch > max_epochs || max_epochs == 0 {
        return Err(TrainError::EpochOutOfRange { epoch, max_epochs });
    }
    Ok(initial * (1.0 - epoch as f64 / max_epochs as f64).powf(exponent))
}

/// Stochastic gradient descent with (optionally Nesterov) momentum,
/// using the buffer convention `v = mu * v + g`.
#[derive(Clone, Debug)]
pub struct Sgd<T: Scalar> {
    pub momentum: f64,
    pub nesterov: bool,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(store: &ParamStore<T>, momentum: f64, nesterov: bool) -> Self {
        let velocity = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self { momentum, nesterov, velocity }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        let mu = T::from_acc(self.momentum);
        let lr = T::from_acc(lr);
        for (p, v) in store.iter_mut().zip(self.velocity.iter_mut()) {
            for ((w, &g), vel) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(v.data_mut()) {
                *vel = mu * *vel + g;
                let update = if self.nesterov { g + mu * *vel } else { *vel };
                *w -= lr * update;
            }
        }
    }
}
