use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::time::Instant;

use crate::autodiff::params::{ParamId, ParamStore};
use crate::error::{Result, TensorError};
use crate::ops::{activation, conv, conv1d, linear, norm, shape};
use crate::ops::norm::NormStats;
use crate::scalar::Scalar;
use crate::tensor::{Dims3, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Adjoint rule for ops defined outside this module (selective scan, losses).
pub trait CustomOp<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradient for each input; entries whose `needs` flag is false may be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>>;
}

enum Op<T: Scalar> {
    Input,
    Param(ParamId),
    Conv3d { x: Var, w: Var, b: Option<Var>, stride: Dims3, padding: Dims3 },
    ConvTranspose3d { x: Var, w: Var, b: Option<Var>, stride: Dims3 },
    InstanceNorm { x: Var, gamma: Var, beta: Var, stats: NormStats },
    LayerNorm { x: Var, gamma: Var, beta: Var, stats: NormStats },
    Linear { x: Var, w: Var, b: Option<Var> },
    DepthwiseConv1d { x: Var, kernel: Var },
    LeakyRelu { x: Var, slope: f64 },
    Silu { x: Var },
    Softplus { x: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, s: f64 },
    Concat { a: Var, b: Var },
    Reshape { x: Var },
    TransposeLast2 { x: Var },
    Softmax { x: Var },
    Sum { x: Var },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Conv3d { .. } => "conv3d",
            Op::ConvTranspose3d { .. } => "conv_transpose3d",
            Op::InstanceNorm { .. } => "instance_norm",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Linear { .. } => "linear",
            Op::DepthwiseConv1d { .. } => "depthwise_conv1d_causal",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Silu { .. } => "silu",
            Op::Softplus { .. } => "softplus",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Concat { .. } => "concat_channels",
            Op::Reshape { .. } => "reshape",
            Op::TransposeLast2 { .. } => "transpose_last2",
            Op::Softmax { .. } => "softmax_channels",
            Op::Sum { .. } => "sum",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node<T: Scalar> {
    shape: Vec<usize>,
    value: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Accumulated wall time of one op kind.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OpTiming {
    pub calls: usize,
    pub forward_s: f64,
    pub backward_s: f64,
}

struct Profile {
    mark: Cell<Instant>,
    table: RefCell<BTreeMap<&'static str, OpTiming>>,
}

/// One recorded op together with the scope it ran in.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub scope: String,
    pub op: &'static str,
    /// Output shape of the op.
    pub shape: Vec<usize>,
}

/// Record of executed operations; replayed in reverse by [`Tape::backward`].
///
/// A tape built with [`Tape::shape_only`] propagates shapes without touching
/// any data, which lets full-size configurations be checked cheaply.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    shape_only: bool,
    scopes: Vec<String>,
    trace: Option<Vec<TraceEntry>>,
    profile: Option<Profile>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.axpy(T::one(), &g),
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), shape_only: false, scopes: Vec::new(), trace: None, profile: None }
    }

    pub fn shape_only() -> Self {
        Self { shape_only: true, ..Self::new() }
    }

    pub fn is_shape_only(&self) -> bool {
        self.shape_only
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Starts recording `(scope, op)` pairs for every subsequent op.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    /// Starts attributing wall time to op kinds. Forward time is the interval
    /// since the previous recorded op.
    pub fn enable_profile(&mut self) {
        self.profile = Some(Profile { mark: Cell::new(Instant::now()), table: RefCell::new(BTreeMap::new()) });
    }

    pub fn profile(&self) -> Vec<(&'static str, OpTiming)> {
        self.profile
            .as_ref()
            .map(|p| p.table.borrow().iter().map(|(k, v)| (*k, *v)).collect())
            .unwrap_or_default()
    }

    pub fn trace(&self) -> &[TraceEntry] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn push_scope(&mut self, name: &str) {
        self.scopes.push(name.to_string());
    }

    pub fn pop_scope(&mut self) {
        self.scopes.pop();
    }

    pub fn scope(&self) -> String {
        self.scopes.join(".")
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a node. Errors on shape-only tapes.
    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        self.nodes[v.0].value.as_ref().ok_or(TensorError::ShapeOnly { op: "value" })
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        self.nodes[v.0].value.as_ref().expect("value present on a computing tape")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, shape: Vec<usize>, value: Option<Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceEntry { scope: self.scopes.join("."), op: op.name(), shape: shape.clone() });
        }
        if let Some(p) = &self.profile {
            let now = Instant::now();
            let mut table = p.table.borrow_mut();
            let e = table.entry(op.name()).or_default();
            e.calls += 1;
            e.forward_s += (now - p.mark.get()).as_secs_f64();
            p.mark.set(now);
        }
        self.nodes.push(Node { shape, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Option<Var>]) -> bool {
        vars.iter().flatten().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Input that does not need a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        let value = (!self.shape_only).then_some(t);
        self.push(shape, value, Op::Input, false)
    }

    /// Input whose gradient is wanted.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        let value = (!self.shape_only).then_some(t);
        self.push(shape, value, Op::Input, true)
    }

    /// Shape-only placeholder input (valid on any tape, holds no data when shape-only).
    pub fn input_shape(&mut self, shape: &[usize]) -> Var {
        let value = (!self.shape_only).then(|| Tensor::zeros(shape));
        self.push(shape.to_vec(), value, Op::Input, false)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        let value = (!self.shape_only).then(|| p.value.clone());
        self.push(p.value.shape().to_vec(), value, Op::Param(id), true)
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, stride: Dims3, padding: Dims3) -> Result<Var> {
        let bias_shape = b.map(|b| self.shape(b).to_vec());
        let (_, out) = conv::conv3d_geometry(self.shape(x), self.shape(w), bias_shape.as_deref(), stride, padding)?;
        let value = if self.shape_only {
            None
        } else {
            Some(conv::conv3d(self.val(x), self.val(w), b.map(|b| self.val(b)), stride, padding)?)
        };
        let rg = self.any_grad(&[Some(x), Some(w), b]);
        Ok(self.push(out, value, Op::Conv3d { x, w, b, stride, padding }, rg))
    }

    pub fn conv_transpose3d(&mut self, x: Var, w: Var, b: Option<Var>, stride: Dims3) -> Result<Var> {
        let bias_shape = b.map(|b| self.shape(b).to_vec());
        let (_, out) = conv::conv_transpose3d_geometry(self.shape(x), self.shape(w), bias_shape.as_deref(), stride)?;
        let value = if self.shape_only {
            None
        } else {
            Some(conv::conv_transpose3d(self.val(x), self.val(w), b.map(|b| self.val(b)), stride)?)
        };
        let rg = self.any_grad(&[Some(x), Some(w), b]);
        Ok(self.push(out, value, Op::ConvTranspose3d { x, w, b, stride }, rg))
    }

    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        norm::instance_norm_check(self.shape(x), self.shape(gamma), self.shape(beta))?;
        let out = self.shape(x).to_vec();
        let (value, stats) = if self.shape_only {
            (None, NormStats { mean: vec![], rstd: vec![] })
        } else {
            let (y, s) = norm::instance_norm(self.val(x), self.val(gamma), self.val(beta), eps)?;
            (Some(y), s)
        };
        let rg = self.any_grad(&[Some(x), Some(gamma), Some(beta)]);
        Ok(self.push(out, value, Op::InstanceNorm { x, gamma, beta, stats }, rg))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        norm::layer_norm_check(self.shape(x), self.shape(gamma), self.shape(beta))?;
        let out = self.shape(x).to_vec();
        let (value, stats) = if self.shape_only {
            (None, NormStats { mean: vec![], rstd: vec![] })
        } else {
            let (y, s) = norm::layer_norm(self.val(x), self.val(gamma), self.val(beta), eps)?;
            (Some(y), s)
        };
        let rg = self.any_grad(&[Some(x), Some(gamma), Some(beta)]);
        Ok(self.push(out, value, Op::LayerNorm { x, gamma, beta, stats }, rg))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let bias_shape = b.map(|b| self.shape(b).to_vec());
        let out = linear::linear_shape(self.shape(x), self.shape(w), bias_shape.as_deref())?;
        let value = if self.shape_only {
            None
        } else {
            Some(linear::linear(self.val(x), self.val(w), b.map(|b| self.val(b)))?)
        };
        let rg = self.any_grad(&[Some(x), Some(w), b]);
        Ok(self.push(out, value, Op::Linear { x, w, b }, rg))
    }

    pub fn depthwise_conv1d_causal(&mut self, x: Var, kernel: Var) -> Result<Var> {
        conv1d::depthwise_conv1d_check(self.shape(x), self.shape(kernel))?;
        let out = self.shape(x).to_vec();
        let value = if self.shape_only {
            None
        } else {
            Some(conv1d::depthwise_conv1d_causal(self.val(x), self.val(kernel))?)
        };
        let rg = self.any_grad(&[Some(x), Some(kernel)]);
        Ok(self.push(out, value, Op::DepthwiseConv1d { x, kernel }, rg))
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl FnOnce(&Tensor<T>) -> Tensor<T>) -> Var {
        let out = self.shape(x).to_vec();
        let value = (!self.shape_only).then(|| f(self.val(x)));
        let rg = self.requires_grad(x);
        self.push(out, value, op, rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, Op::LeakyRelu { x, slope }, |t| activation::leaky_relu(t, slope))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Silu { x }, activation::silu)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Op::Softplus { x }, activation::softplus)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let f = T::from_acc(s);
        self.unary(x, Op::Scale { x, s }, |t| t.map(|v| v * f))
    }

    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let out = self.shape(x).to_vec();
        let value = if self.shape_only { None } else { Some(shape::softmax_channels(self.val(x))?) };
        let rg = self.requires_grad(x);
        Ok(self.push(out, value, Op::Softmax { x }, rg))
    }

    fn binary_same(&mut self, name: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape(name, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(self.shape(a).to_vec())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary_same("add", a, b)?;
        let value = (!self.shape_only).then(|| activation::zip_map(self.val(a), self.val(b), |x, y| x + y));
        let rg = self.any_grad(&[Some(a), Some(b)]);
        Ok(self.push(out, value, Op::Add { a, b }, rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary_same("mul", a, b)?;
        let value = (!self.shape_only).then(|| activation::zip_map(self.val(a), self.val(b), |x, y| x * y));
        let rg = self.any_grad(&[Some(a), Some(b)]);
        Ok(self.push(out, value, Op::Mul { a, b }, rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = shape::concat_shape(self.shape(a), self.shape(b))?;
        let value = if self.shape_only { None } else { Some(shape::concat_channels(self.val(a), self.val(b))?) };
        let rg = self.any_grad(&[Some(a), Some(b)]);
        Ok(self.push(out, value, Op::Concat { a, b }, rg))
    }

    pub fn reshape(&mut self, x: Var, new_shape: &[usize]) -> Result<Var> {
        let n: usize = self.shape(x).iter().product();
        if n != new_shape.iter().product::<usize>() {
            return Err(TensorError::shape("reshape", format!("{:?} -> {new_shape:?}", self.shape(x))));
        }
        let value = if self.shape_only { None } else { Some(self.val(x).clone().reshape(new_shape)?) };
        let rg = self.requires_grad(x);
        Ok(self.push(new_shape.to_vec(), value, Op::Reshape { x }, rg))
    }

    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let out = shape::transpose_last2_shape(self.shape(x))?;
        let value = if self.shape_only { None } else { Some(shape::transpose_last2(self.val(x))?) };
        let rg = self.requires_grad(x);
        Ok(self.push(out, value, Op::TransposeLast2 { x }, rg))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = (!self.shape_only).then(|| Tensor::scalar(T::from_acc(self.val(x).sum())));
        let rg = self.requires_grad(x);
        self.push(vec![], value, Op::Sum { x }, rg)
    }

    /// Records an externally computed op. `value` must be `None` exactly when
    /// the tape is shape-only.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        shape: Vec<usize>,
        value: Option<Tensor<T>>,
        op: Box<dyn CustomOp<T>>,
    ) -> Var {
        debug_assert_eq!(value.is_none(), self.shape_only);
        let rg = inputs.iter().any(|v| self.requires_grad(*v));
        self.push(shape, value, Op::Custom { inputs: inputs.to_vec(), op }, rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.shape_only {
            return Err(TensorError::ShapeOnly { op: "backward" });
        }
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(shape));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let is_leaf = matches!(node.op, Op::Input | Op::Param(_));
            if is_leaf {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let t0 = self.profile.as_ref().map(|_| Instant::now());
            for (v, gv) in self.node_backward(i, &g) {
                if self.nodes[v.0].requires_grad {
                    accumulate(&mut grads[v.0], gv);
                }
            }
            if let (Some(p), Some(t0)) = (&self.profile, t0) {
                p.table.borrow_mut().entry(node.op.name()).or_default().backward_s += t0.elapsed().as_secs_f64();
            }
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn node_backward(&self, i: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[i];
        let mut out = Vec::with_capacity(3);
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Conv3d { x, w, b, stride, padding } => {
                let (dx, dw, db) = conv::conv3d_backward(self.val(*x), self.val(*w), g, *stride, *padding, self.needs(*x));
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                out.push((*w, dw));
                if let Some(b) = b {
                    out.push((*b, db));
                }
            }
            Op::ConvTranspose3d { x, w, b, stride } => {
                let (dx, dw, db) = conv::conv_transpose3d_backward(self.val(*x), self.val(*w), g, *stride, self.needs(*x));
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                out.push((*w, dw));
                if let Some(b) = b {
                    out.push((*b, db));
                }
            }
            Op::InstanceNorm { x, gamma, beta, stats } => {
                let (dx, dg, db) = norm::instance_norm_backward(self.val(*x), self.val(*gamma), stats, g);
                out.extend([(*x, dx), (*gamma, dg), (*beta, db)]);
            }
            Op::LayerNorm { x, gamma, beta, stats } => {
                let (dx, dg, db) = norm::layer_norm_backward(self.val(*x), self.val(*gamma), stats, g);
                out.extend([(*x, dx), (*gamma, dg), (*beta, db)]);
            }
            Op::Linear { x, w, b } => {
                let (dx, dw, db) = linear::linear_backward(self.val(*x), self.val(*w), g, self.needs(*x));
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                out.push((*w, dw));
                if let Some(b) = b {
                    out.push((*b, db));
                }
            }
            Op::DepthwiseConv1d { x, kernel } => {
                let (dx, dk) = conv1d::depthwise_conv1d_backward(self.val(*x), self.val(*kernel), g);
                out.extend([(*x, dx), (*kernel, dk)]);
            }
            Op::LeakyRelu { x, slope } => out.push((*x, activation::leaky_relu_backward(self.val(*x), g, *slope))),
            Op::Silu { x } => out.push((*x, activation::silu_backward(self.val(*x), g))),
            Op::Softplus { x } => out.push((*x, activation::softplus_backward(self.val(*x), g))),
            Op::Add { a, b } => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.val(*a), self.val(*b));
                out.push((*a, activation::zip_map(g, vb, |d, y| d * y)));
                out.push((*b, activation::zip_map(g, va, |d, x| d * x)));
            }
            Op::Scale { x, s } => {
                let f = T::from_acc(*s);
                out.push((*x, g.map(|v| v * f)));
            }
            Op::Concat { a, b } => {
                let (da, db) = shape::split_channels(g, self.shape(*a), self.shape(*b));
                out.extend([(*a, da), (*b, db)]);
            }
            Op::Reshape { x } => out.push((*x, g.clone().reshape(self.shape(*x)).expect("shape"))),
            Op::TransposeLast2 { x } => out.push((*x, shape::transpose_last2(g).expect("shape"))),
            Op::Softmax { x } => {
                let p = node.value.as_ref().expect("value");
                out.push((*x, shape::softmax_channels_backward(p, g)));
            }
            Op::Sum { x } => out.push((*x, Tensor::full(self.shape(*x), g.data()[0]))),
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| self.val(*v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|v| self.needs(*v)).collect();
                let output = node.value.as_ref().expect("value");
                for (v, gv) in inputs.iter().zip(op.backward(&vals, output, g, &needs)) {
                    if let Some(gv) = gv {
                        out.push((*v, gv));
                    }
                }
            }
        }
        out
    }

    /// Adds every parameter leaf's gradient into `store`.
    pub fn accumulate_param_grads(&self, grads: &Gradients<T>, store: &mut ParamStore<T>) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                if let Some(g) = grads.grads[i].as_ref() {
                    store.get_mut(id).grad.axpy(T::one(), g);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1], 3.0));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        // y = x + 2x + x*x at x = 1.5 -> dy/dx = 3 + 2x = 6
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1], 1.5));
        let x2 = tape.scale(x, 2.0);
        let a = tape.add(x, x2).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let y = tape.add(a, sq).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn params_receive_grads() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::full(&[2], 2.0));
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let w2 = tape.mul(w, w).unwrap();
        let s = tape.sum(w2);
        let g = tape.backward(s).unwrap();
        tape.accumulate_param_grads(&g, &mut store);
        assert_eq!(store.get(id).grad.data(), &[4.0, 4.0]);
    }

    #[test]
    fn shape_only_propagates_shapes() {
        let mut tape = Tape::<f32>::shape_only();
        let x = tape.input_shape(&[1, 4, 48, 192, 192]);
        let mut store = ParamStore::new();
        let wid = store.add("w", Tensor::zeros(&[8, 4, 3, 3, 3]));
        let w = tape.param(&store, wid);
        let y = tape.conv3d(x, w, None, [2, 2, 2], [1, 1, 1]).unwrap();
        assert_eq!(tape.shape(y), &[1, 8, 24, 96, 96]);
        assert!(tape.value(y).is_err());
    }

    #[test]
    fn trace_records_scope() {
        let mut tape = Tape::<f32>::new();
        tape.enable_trace();
        tape.push_scope("enc");
        tape.push_scope("stage1");
        let x = tape.constant(Tensor::zeros(&[1]));
        tape.silu(x);
        tape.pop_scope();
        assert_eq!(tape.trace()[1], TraceEntry { scope: "enc.stage1".into(), op: "silu", shape: vec![1] });
    }
}
