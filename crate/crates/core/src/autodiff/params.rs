use std::collections::BTreeMap;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable tensor with its accumulated gradient and a dotted name path.
#[derive(Clone, Debug)]
pub struct Parameter<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Registry of every parameter of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Scalar> {
    params: Vec<Parameter<T>>,
    by_name: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: BTreeMap::new() }
    }

    /// Registers a parameter. Panics on duplicate names: a model builder bug.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name {name}");
        let id = self.params.len();
        let grad = Tensor::zeros(value.shape());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    /// Total number of scalars across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params.iter().map(|p| p.grad.norm_sq()).sum::<f64>().sqrt()
    }

    /// All parameter values concatenated in registration order.
    pub fn flat_values(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.grad.data().iter().copied()).collect()
    }

    /// Overwrites values from a flat vector laid out like [`Self::flat_values`].
    pub fn set_flat_values(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.scalar_count());
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.numel();
            p.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// Same parameters converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter { name: p.name.clone(), value: p.value.cast(), grad: p.grad.cast() })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the applied factor (1.0 when no clipping happened).
pub fn clip_grad_total_norm<T: Scalar>(params: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if !(norm > max_norm) || norm == 0.0 {
        return 1.0;
    }
    let scale = max_norm / norm;
    let s = T::from_acc(scale);
    for p in params.iter_mut() {
        p.grad.scale(s);
    }
    scale
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with_grad(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::zeros(&[values.len()]));
        s.get_mut(id).grad = Tensor::from_f64(&[values.len()], values).unwrap();
        s
    }

    #[test]
    fn clips_to_unit_norm() {
        let mut s = store_with_grad(&[1.2, 1.6]); // norm 2
        let scale = clip_grad_total_norm(&mut s, 1.0);
        assert!((scale - 0.5).abs() < 1e-12);
        assert!((s.grad_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_norm_untouched() {
        let mut s = store_with_grad(&[0.3, 0.4]);
        assert_eq!(clip_grad_total_norm(&mut s, 1.0), 1.0);
        assert_eq!(s.flat_grads(), vec![0.3, 0.4]);
    }

    #[test]
    fn zero_grads_no_division() {
        let mut s = store_with_grad(&[0.0, 0.0]);
        assert_eq!(clip_grad_total_norm(&mut s, 1.0), 1.0);
        assert_eq!(s.flat_grads(), vec![0.0, 0.0]);
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add("a", Tensor::zeros(&[1]));
        s.add("a", Tensor::zeros(&[1]));
    }
}
