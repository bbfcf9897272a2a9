//! Scalar abstraction shared by every numeric module.
//!
//! All model code is written against [`Scalar`]; training runs in `f32`
//! while gradient oracles and closed-form checks run in `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type usable as a tensor element.
///
/// The dense kernels the autograd engine needs (matrix products) hang off
/// this trait so that each concrete type can route to an optimized backend.
/// The provided default is a plain triple loop.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Default + Debug + Display + Send + Sync + 'static
{
    /// Dtype code used by the tensor file format, if this type is storable.
    const DTYPE_CODE: Option<u8> = None;

    /// `C = alpha * A * B + beta * C` over strided row/column layouts.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`; strides are in
    /// elements. When `beta` is zero, `c` is overwritten.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
        rsc: usize,
        csc: usize,
    ) {
        for i in 0..m {
            for j in 0..n {
                let mut acc = Self::zero();
                for p in 0..k {
                    acc += a[i * rsa + p * csa] * b[p * rsb + j * csb];
                }
                let dst = &mut c[i * rsc + j * csc];
                *dst = if beta == Self::zero() { alpha * acc } else { alpha * acc + beta * *dst };
            }
        }
    }

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("scalar conversion")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("scalar conversion")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar conversion")
    }

    /// Stand-in for negative infinity in additive attention masks.
    #[inline]
    fn mask_value() -> Self {
        Self::min_value()
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: usize, cs: usize) {
    if rows > 0 && cols > 0 {
        let last = (rows - 1) * rs + (cols - 1) * cs;
        assert!(last < len, "gemm operand out of bounds ({last} >= {len})");
    }
}

macro_rules! impl_blas_scalar {
    ($t:ty, $code:expr, $kernel:path) => {
        impl Scalar for $t {
            const DTYPE_CODE: Option<u8> = $code;

            fn gemm_strided(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                beta: Self,
                c: &mut [Self],
                rsc: usize,
                csc: usize,
            ) {
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, csc);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every operand extent was bounds-checked above and
                // `c` is uniquely borrowed.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    );
                }
            }
        }
    };
}

impl_blas_scalar!(f32, Some(0), matrixmultiply::sgemm);
impl_blas_scalar!(f64, None, matrixmultiply::dgemm);

/// Row-major contiguous matrix product with optional transposes:
/// `C (m x n) = alpha * op(A) * op(B) + beta * C`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    // op(A) is m x k; stored as m x k (lda = k) or k x m (lda = m).
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    T::gemm_strided(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, n, 1);
}
