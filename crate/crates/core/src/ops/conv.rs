//! Direct 3D convolution through an im2col gather and a single GEMM per batch
//! item, plus the kernel == stride transposed convolution used for decoder
//! upsampling.

use crate::error::{Result, TensorError};
use crate::scalar::{gemm, give_buffer, take_buffer, MatRef, Scalar};
use crate::tensor::{Dims3, Tensor};

/// Index bookkeeping shared by im2col / col2im.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGeometry {
    pub channels: usize,
    pub in_dims: Dims3,
    pub kernel: Dims3,
    pub stride: Dims3,
    pub padding: Dims3,
    pub out_dims: Dims3,
}

impl PatchGeometry {
    pub fn new(channels: usize, in_dims: Dims3, kernel: Dims3, stride: Dims3, padding: Dims3) -> Result<Self> {
        let mut out_dims = [0; 3];
        for a in 0..3 {
            if stride[a] == 0 || kernel[a] == 0 {
                return Err(TensorError::arg("conv3d", "zero kernel or stride"));
            }
            let padded = in_dims[a] + 2 * padding[a];
            if padded < kernel[a] {
                return Err(TensorError::shape(
                    "conv3d",
                    format!("axis {a}: padded extent {padded} smaller than kernel {}", kernel[a]),
                ));
            }
            out_dims[a] = (padded - kernel[a]) / stride[a] + 1;
        }
        Ok(Self { channels, in_dims, kernel, stride, padding, out_dims })
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn rows(&self) -> usize {
        self.channels * self.taps()
    }

    pub fn in_voxels(&self) -> usize {
        self.in_dims.iter().product()
    }

    pub fn out_voxels(&self) -> usize {
        self.out_dims.iter().product()
    }

    /// True when im2col is the identity (1x1x1, unit stride, no padding).
    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.padding == [0, 0, 0]
    }

    /// Output index range `[lo, hi)` along `axis` whose input coordinate
    /// `o * stride + k - pad` falls inside the input.
    fn valid_range(&self, axis: usize, k: usize) -> (usize, usize) {
        let s = self.stride[axis] as isize;
        let off = k as isize - self.padding[axis] as isize;
        let n_in = self.in_dims[axis] as isize;
        let n_out = self.out_dims[axis] as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        // largest o with o*s + off <= n_in - 1
        let hi = if n_in - 1 - off < 0 { 0 } else { (n_in - 1 - off) / s + 1 };
        let lo = lo.clamp(0, n_out) as usize;
        let hi = hi.clamp(0, n_out) as usize;
        (lo, hi.max(lo))
    }
}

/// Gathers receptive fields into `cols[rows x out_voxels]`.
pub fn im2col<T: Scalar>(x: &[T], g: &PatchGeometry, cols: &mut [T]) {
    let [zi, yi, xi] = g.in_dims;
    let [_, yo, xo] = g.out_dims;
    let n = g.out_voxels();
    let [sz, sy, sx] = g.stride;
    let mut row = 0;
    for c in 0..g.channels {
        for kz in 0..g.kernel[0] {
            let (z_lo, z_hi) = g.valid_range(0, kz);
            for ky in 0..g.kernel[1] {
                let (y_lo, y_hi) = g.valid_range(1, ky);
                for kx in 0..g.kernel[2] {
                    let (x_lo, x_hi) = g.valid_range(2, kx);
                    let dst = &mut cols[row * n..(row + 1) * n];
                    dst.fill(T::zero());
                    for oz in z_lo..z_hi {
                        let iz = oz * sz + kz - g.padding[0];
                        for oy in y_lo..y_hi {
                            let iy = oy * sy + ky - g.padding[1];
                            let src = ((c * zi + iz) * yi + iy) * xi;
                            let o = (oz * yo + oy) * xo;
                            if sx == 1 {
                                let ix0 = x_lo + kx - g.padding[2];
                                dst[o + x_lo..o + x_hi].copy_from_slice(&x[src + ix0..src + ix0 + (x_hi - x_lo)]);
                            } else {
                                for ox in x_lo..x_hi {
                                    dst[o + ox] = x[src + ox * sx + kx - g.padding[2]];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Scatter-adds `cols[rows x out_voxels]` back into `x` (adjoint of [`im2col`]).
pub fn col2im<T: Scalar>(cols: &[T], g: &PatchGeometry, x: &mut [T]) {
    let [zi, yi, xi] = g.in_dims;
    let [_, yo, xo] = g.out_dims;
    let n = g.out_voxels();
    let [sz, sy, sx] = g.stride;
    let mut row = 0;
    for c in 0..g.channels {
        for kz in 0..g.kernel[0] {
            let (z_lo, z_hi) = g.valid_range(0, kz);
            for ky in 0..g.kernel[1] {
                let (y_lo, y_hi) = g.valid_range(1, ky);
                for kx in 0..g.kernel[2] {
                    let (x_lo, x_hi) = g.valid_range(2, kx);
                    let src = &cols[row * n..(row + 1) * n];
                    for oz in z_lo..z_hi {
                        let iz = oz * sz + kz - g.padding[0];
                        for oy in y_lo..y_hi {
                            let iy = oy * sy + ky - g.padding[1];
                            let dst = ((c * zi + iz) * yi + iy) * xi;
                            let o = (oz * yo + oy) * xo;
                            if sx == 1 {
                                let ix0 = dst + x_lo + kx - g.padding[2];
                                let len = x_hi - x_lo;
                                for (d, &v) in x[ix0..ix0 + len].iter_mut().zip(&src[o + x_lo..o + x_hi]) {
                                    *d += v;
                                }
                            } else {
                                for ox in x_lo..x_hi {
                                    x[dst + ox * sx + kx - g.padding[2]] += src[o + ox];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn dims3(shape: &[usize]) -> Dims3 {
    [shape[2], shape[3], shape[4]]
}

/// Validates shapes and returns the geometry plus output shape of a 3D convolution.
pub fn conv3d_geometry(
    x_shape: &[usize],
    w_shape: &[usize],
    bias_shape: Option<&[usize]>,
    stride: Dims3,
    padding: Dims3,
) -> Result<(PatchGeometry, Vec<usize>)> {
    if x_shape.len() != 5 || w_shape.len() != 5 {
        return Err(TensorError::shape(
            "conv3d",
            format!("expected rank-5 input and weight, got {x_shape:?} and {w_shape:?}"),
        ));
    }
    if x_shape[1] != w_shape[1] {
        return Err(TensorError::shape(
            "conv3d",
            format!("input has {} channels but weight expects {} (input {x_shape:?}, weight {w_shape:?})", x_shape[1], w_shape[1]),
        ));
    }
    if let Some(bs) = bias_shape {
        if bs != [w_shape[0]] {
            return Err(TensorError::shape("conv3d", format!("bias {bs:?} vs {} output channels", w_shape[0])));
        }
    }
    let g = PatchGeometry::new(x_shape[1], dims3(x_shape), dims3(w_shape), stride, padding)?;
    let [zo, yo, xo] = g.out_dims;
    Ok((g, vec![x_shape[0], w_shape[0], zo, yo, xo]))
}

/// Cross-correlation `y[b, co] = sum_ci w[co, ci] * x[b, ci] + bias[co]`.
pub fn conv3d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: Dims3,
    padding: Dims3,
) -> Result<Tensor<T>> {
    let (g, out_shape) = conv3d_geometry(x.shape(), w.shape(), bias.map(|b| b.shape()), stride, padding)?;
    let batch = x.shape()[0];
    let cout = w.shape()[0];
    let (k, n, nin) = (g.rows(), g.out_voxels(), g.in_voxels());
    let mut out = vec![T::zero(); batch * cout * n];
    let mut cols = if g.is_pointwise() { Vec::new() } else { take_buffer(k * n) };
    for b in 0..batch {
        let xb = &x.data()[b * g.channels * nin..(b + 1) * g.channels * nin];
        let rhs = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, &g, &mut cols);
            &cols
        };
        let yb = &mut out[b * cout * n..(b + 1) * cout * n];
        gemm(T::one(), MatRef::new(w.data(), cout, k), MatRef::new(rhs, k, n), T::zero(), yb);
        if let Some(bias) = bias {
            for (co, chunk) in yb.chunks_exact_mut(n).enumerate() {
                let bv = bias.data()[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    give_buffer(cols);
    Tensor::new(&out_shape, out)
}

/// Gradients of [`conv3d`]. `dx` is only formed when requested.
pub fn conv3d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: Dims3,
    padding: Dims3,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (g, _) = conv3d_geometry(x.shape(), w.shape(), None, stride, padding).expect("validated in forward");
    let batch = x.shape()[0];
    let cout = w.shape()[0];
    let (k, n, nin) = (g.rows(), g.out_voxels(), g.in_voxels());
    let mut dw = vec![T::zero(); cout * k];
    let mut db = vec![0.0f64; cout];
    let mut dx = if need_dx { Some(vec![T::zero(); x.numel()]) } else { None };
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { take_buffer(k * n) };
    let mut dcols = if need_dx && !pointwise { take_buffer(k * n) } else { Vec::new() };
    for b in 0..batch {
        let xb = &x.data()[b * g.channels * nin..(b + 1) * g.channels * nin];
        let dyb = &dy.data()[b * cout * n..(b + 1) * cout * n];
        for (co, chunk) in dyb.chunks_exact(n).enumerate() {
            db[co] += chunk.iter().map(|v| v.to_acc()).sum::<f64>();
        }
        let rhs = if pointwise {
            xb
        } else {
            im2col(xb, &g, &mut cols);
            &cols
        };
        gemm(T::one(), MatRef::new(dyb, cout, n), MatRef::t(rhs, k, n), T::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * g.channels * nin..(b + 1) * g.channels * nin];
            if pointwise {
                gemm(T::one(), MatRef::t(w.data(), cout, k), MatRef::new(dyb, cout, n), T::zero(), dxb);
            } else {
                gemm(T::one(), MatRef::t(w.data(), cout, k), MatRef::new(dyb, cout, n), T::zero(), &mut dcols);
                col2im(&dcols, &g, dxb);
            }
        }
    }
    give_buffer(cols);
    give_buffer(dcols);
    (
        dx.map(|d| Tensor::new(x.shape(), d).expect("shape")),
        Tensor::new(w.shape(), dw).expect("shape"),
        Tensor::new(&[cout], db.into_iter().map(T::from_acc).collect()).expect("shape"),
    )
}

/// Geometry of a transposed convolution with kernel == stride, expressed as
/// the im2col geometry of the matching forward convolution on the output.
pub fn conv_transpose3d_geometry(
    x_shape: &[usize],
    w_shape: &[usize],
    bias_shape: Option<&[usize]>,
    stride: Dims3,
) -> Result<(PatchGeometry, Vec<usize>)> {
    if x_shape.len() != 5 || w_shape.len() != 5 {
        return Err(TensorError::shape(
            "conv_transpose3d",
            format!("expected rank-5 input and weight, got {x_shape:?} and {w_shape:?}"),
        ));
    }
    if x_shape[1] != w_shape[0] {
        return Err(TensorError::shape(
            "conv_transpose3d",
            format!("input has {} channels but weight expects {}", x_shape[1], w_shape[0]),
        ));
    }
    let kernel = dims3(w_shape);
    if kernel != stride {
        return Err(TensorError::arg(
            "conv_transpose3d",
            format!("kernel {kernel:?} must equal stride {stride:?}"),
        ));
    }
    let cout = w_shape[1];
    if let Some(bs) = bias_shape {
        if bs != [cout] {
            return Err(TensorError::shape("conv_transpose3d", format!("bias {bs:?} vs {cout} output channels")));
        }
    }
    let in_dims = dims3(x_shape);
    let out_dims = [in_dims[0] * stride[0], in_dims[1] * stride[1], in_dims[2] * stride[2]];
    let g = PatchGeometry::new(cout, out_dims, kernel, stride, [0, 0, 0])?;
    debug_assert_eq!(g.out_dims, in_dims);
    Ok((g, vec![x_shape[0], cout, out_dims[0], out_dims[1], out_dims[2]]))
}

/// Upsampling by `stride` with weight `[Cin, Cout, kz, ky, kx]`, kernel == stride.
/// This is the adjoint of [`conv3d`] with weight layout `[Cout_conv=Cin, Cin_conv=Cout, ...]`.
pub fn conv_transpose3d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: Dims3,
) -> Result<Tensor<T>> {
    let (g, out_shape) = conv_transpose3d_geometry(x.shape(), w.shape(), bias.map(|b| b.shape()), stride)?;
    let batch = x.shape()[0];
    let cin = x.shape()[1];
    let (k, nin) = (g.rows(), g.out_voxels());
    let nout = g.in_voxels();
    let cout = g.channels;
    let mut out = vec![T::zero(); batch * cout * nout];
    let mut cols = take_buffer(k * nin);
    for b in 0..batch {
        let xb = &x.data()[b * cin * nin..(b + 1) * cin * nin];
        gemm(T::one(), MatRef::t(w.data(), cin, k), MatRef::new(xb, cin, nin), T::zero(), &mut cols);
        let yb = &mut out[b * cout * nout..(b + 1) * cout * nout];
        col2im(&cols, &g, yb);
        if let Some(bias) = bias {
            for (co, chunk) in yb.chunks_exact_mut(nout).enumerate() {
                let bv = bias.data()[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    give_buffer(cols);
    Tensor::new(&out_shape, out)
}

pub fn conv_transpose3d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: Dims3,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (g, _) = conv_transpose3d_geometry(x.shape(), w.shape(), None, stride).expect("validated in forward");
    let batch = x.shape()[0];
    let cin = x.shape()[1];
    let (k, nin, nout, cout) = (g.rows(), g.out_voxels(), g.in_voxels(), g.channels);
    let mut dcols = take_buffer(k * nin);
    let mut dw = vec![T::zero(); cin * k];
    let mut db = vec![0.0f64; cout];
    let mut dx = if need_dx { Some(vec![T::zero(); x.numel()]) } else { None };
    for b in 0..batch {
        let dyb = &dy.data()[b * cout * nout..(b + 1) * cout * nout];
        for (co, chunk) in dyb.chunks_exact(nout).enumerate() {
            db[co] += chunk.iter().map(|v| v.to_acc()).sum::<f64>();
        }
        im2col(dyb, &g, &mut dcols);
        let xb = &x.data()[b * cin * nin..(b + 1) * cin * nin];
        gemm(T::one(), MatRef::new(xb, cin, nin), MatRef::t(&dcols, k, nin), T::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * cin * nin..(b + 1) * cin * nin];
            gemm(T::one(), MatRef::new(w.data(), cin, k), MatRef::new(&dcols, k, nin), T::zero(), dxb);
        }
    }
    give_buffer(dcols);
    (
        dx.map(|d| Tensor::new(x.shape(), d).expect("shape")),
        Tensor::new(w.shape(), dw).expect("shape"),
        Tensor::new(&[cout], db.into_iter().map(T::from_acc).collect()).expect("shape"),
    )
}
