//! Scalar abstraction for the numeric core.
//!
//! All tensor math is generic over [`Scalar`] so the same kernels run in
//! f32 or f64. The crate-root aliases pin f64 as the working precision;
//! gradient checks rely on it.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type usable inside tensors.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an f64 constant.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }

    /// Widen to f64 (exact for f32/f64).
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("finite value")
    }

    /// General strided C = alpha * A(m x k) * B(k x n) + beta * C, with C row-major.
    ///
    /// # Safety
    /// Pointers must cover the strided extents for the given dimensions.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
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
    );
}

impl Scalar for f32 {
    unsafe fn gemm(
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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
    }
}

impl Scalar for f64 {
    unsafe fn gemm(
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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
    }
}

/// Row-major matrix multiply into `c` (overwrites): C = A(m x k) * B(k x n).
pub fn matmul<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        S::gemm(
            m, k, n,
            S::one(),
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            S::zero(),
            c.as_mut_ptr(),
        )
    }
}

/// C += A(m x k) * B(k x n), all row-major.
pub fn matmul_acc<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        S::gemm(
            m, k, n,
            S::one(),
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            S::one(),
            c.as_mut_ptr(),
        )
    }
}

/// C += A(m x k) * B^T where B is (n x k) row-major.
pub fn matmul_nt_acc<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    unsafe {
        S::gemm(
            m, k, n,
            S::one(),
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), 1, k as isize,
            S::one(),
            c.as_mut_ptr(),
        )
    }
}

/// C = A^T * B where A is (k x m) row-major, B is (k x n) row-major.
pub fn matmul_tn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        S::gemm(
            m, k, n,
            S::one(),
            a.as_ptr(), 1, m as isize,
            b.as_ptr(), n as isize, 1,
            S::zero(),
            c.as_mut_ptr(),
        )
    }
}
