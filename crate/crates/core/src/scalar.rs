use std::fmt::{Debug, Display};
use std::iter::Sum;

use std::cell::RefCell;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Storage scalar for tensors: `f32` for training, `f64` for gradient oracles.
///
/// Reductions go through [`Scalar::to_acc`] so that sums are accumulated in
/// 64-bit regardless of storage width.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;

    /// `c = alpha * a * b + beta * c` over raw strided matrices.
    ///
    /// # Safety
    /// Pointers and strides must describe in-bounds `m x k`, `k x n` and
    /// `m x n` matrices; `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    /// Per-thread pool of reusable work buffers.
    fn buffer_pool() -> &'static std::thread::LocalKey<RefCell<Vec<Vec<Self>>>>;

    /// `x = exp(x)` elementwise. Overridden where a vectorizable form exists.
    #[inline]
    fn exp_in_place(xs: &mut [Self]) {
        for x in xs {
            *x = x.exp();
        }
    }

    #[inline]
    fn to_acc(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_acc(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_acc(v)
    }
}

thread_local! {
    static POOL_F32: RefCell<Vec<Vec<f32>>> = const { RefCell::new(Vec::new()) };
    static POOL_F64: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

/// Borrows a buffer of `len` elements from the pool. Contents are unspecified.
pub(crate) fn take_buffer<T: Scalar>(len: usize) -> Vec<T> {
    let mut v = T::buffer_pool().with(|p| p.borrow_mut().pop()).unwrap_or_default();
    v.resize(len, T::zero());
    v
}

/// Returns a buffer obtained from [`take_buffer`].
pub(crate) fn give_buffer<T: Scalar>(v: Vec<T>) {
    T::buffer_pool().with(|p| {
        let mut p = p.borrow_mut();
        if p.len() < 4 {
            p.push(v);
        }
    });
}

/// Branch-free `expf` (Cody-Waite reduction plus a degree-6 polynomial) that
/// the compiler can vectorize. Within ~2 ulp of `f32::exp`; inputs below
/// -87.3 return about 1e-38 rather than 0 or a subnormal.
#[inline(always)]
fn expf_poly(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    // adding and subtracting 1.5 * 2^23 rounds to the nearest integer
    const ROUND: f32 = 12_582_912.0;
    let x = x.max(-87.3).min(88.3);
    let kr = x * LOG2E + ROUND;
    let k = kr - ROUND;
    let r = x - k * LN2_HI - k * LN2_LO;
    let mut p = 1.987_569_1e-4f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 0.166_666_66;
    p = p * r + 0.5;
    let y = p * r * r + r + 1.0;
    // the low mantissa bits of kr hold k; move k + 127 into the exponent field
    let bits = kr.to_bits().wrapping_sub(ROUND.to_bits()).wrapping_add(127) << 23;
    y * f32::from_bits(bits)
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    #[inline]
    fn exp_in_place(xs: &mut [f32]) {
        for x in xs {
            *x = expf_poly(*x);
        }
    }

    fn buffer_pool() -> &'static std::thread::LocalKey<RefCell<Vec<Vec<f32>>>> {
        &POOL_F32
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    fn buffer_pool() -> &'static std::thread::LocalKey<RefCell<Vec<Vec<f64>>>> {
        &POOL_F64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Row-major matrix view used by [`gemm`]: `rows x cols`, optionally transposed.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> MatRef<'a, T> {
    /// A plain row-major `rows x cols` matrix.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, transposed: false }
    }

    /// The transpose of a row-major `rows x cols` matrix, i.e. a `cols x rows` view.
    pub fn t(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self { data, rows: cols, cols: rows, transposed: true }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.rows as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// Safe `c = alpha * a * b + beta * c` with `c` row-major `a.rows x b.cols`.
pub fn gemm<T: Scalar>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: &mut [T]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension mismatch");
    assert!(a.data.len() >= a.rows * a.cols);
    assert!(b.data.len() >= b.rows * b.cols);
    assert!(c.len() >= a.rows * b.cols);
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: bounds asserted above, `c` is a unique borrow distinct from `a` and `b`.
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_exp_tracks_libm() {
        let mut worst = 0.0f64;
        let xs: Vec<f32> = (0..200_000).map(|i| -87.0 + i as f32 * 0.000_87).collect();
        let mut ys = xs.clone();
        f32::exp_in_place(&mut ys);
        for (&x, &y) in xs.iter().zip(&ys) {
            let e = (x as f64).exp();
            worst = worst.max(((y as f64 - e) / e).abs());
        }
        assert!(worst < 5e-7, "worst relative error {worst}");
        let mut edge = [-1000.0f32, 0.0, f32::NEG_INFINITY];
        f32::exp_in_place(&mut edge);
        assert!(edge[0] < 1e-37 && edge[2] < 1e-37);
        assert_eq!(edge[1], 1.0);
    }

    #[test]
    fn gemm_matches_hand_product() {
        // [1 2; 3 4] * [5; 6] = [17; 39]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0];
        let mut c = [0.0f64; 2];
        gemm(1.0, MatRef::new(&a, 2, 2), MatRef::new(&b, 2, 1), 0.0, &mut c);
        assert_eq!(c, [17.0, 39.0]);
        // a^T * b = [1*5+3*6, 2*5+4*6]
        gemm(1.0, MatRef::t(&a, 2, 2), MatRef::new(&b, 2, 1), 0.0, &mut c);
        assert_eq!(c, [23.0, 34.0]);
    }

    #[test]
    fn accumulation_is_wide() {
        let x = 1.0e-8f32;
        assert!((x.to_acc() - 1.0e-8).abs() < 1e-15);
    }
}
