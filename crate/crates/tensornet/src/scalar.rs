use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Row/column strides of a dense matrix view.
#[doc(hidden)]
#[derive(Debug, Clone, Copy)]
pub struct Strides {
    pub row: usize,
    pub col: usize,
}

impl Strides {
    pub const fn row_major(cols: usize) -> Self {
        Self { row: cols, col: 1 }
    }

    /// Transposed view of a row-major `? x cols` matrix.
    pub const fn col_major(cols: usize) -> Self {
        Self { row: 1, col: cols }
    }

    fn extent(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.row + (cols - 1) * self.col + 1
        }
    }
}

/// Element type of a [`Tensor`](crate::Tensor).
pub trait Scalar:
    Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = a * b + beta * c` for an `m x k` by `k x n` product.
    #[doc(hidden)]
    ///
    /// # Safety
    /// Every strided view must lie inside the allocation behind its pointer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(m: usize, k: usize, n: usize, a: *const Self, sa: Strides, b: *const Self, sb: Strides, beta: Self, c: *mut Self, sc: Strides);
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    sa: Strides,
    b: &[T],
    sb: Strides,
    beta: T,
    c: &mut [T],
    sc: Strides,
) {
    assert!(sa.extent(m, k) <= a.len(), "gemm: lhs view out of bounds");
    assert!(sb.extent(k, n) <= b.len(), "gemm: rhs view out of bounds");
    assert!(sc.extent(m, n) <= c.len(), "gemm: output view out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every view was checked against its slice above.
    unsafe { T::gemm_raw(m, k, n, a.as_ptr(), sa, b.as_ptr(), sb, beta, c.as_mut_ptr(), sc) }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
            unsafe fn gemm_raw(m: usize, k: usize, n: usize, a: *const Self, sa: Strides, b: *const Self, sb: Strides, beta: Self, c: *mut Self, sc: Strides) {
                // SAFETY: upheld by the caller.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a,
                        sa.row as isize,
                        sa.col as isize,
                        b,
                        sb.row as isize,
                        sb.col as isize,
                        beta,
                        c,
                        sc.row as isize,
                        sc.col as isize,
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
