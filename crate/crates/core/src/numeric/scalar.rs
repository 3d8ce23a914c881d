//! Scalar abstraction shared by every tensor routine.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, LinalgScalar};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar usable by the tensor engine. Implemented for `f32` (training
/// and inference) and `f64` (gradient checking).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// Lossy conversion from `f64`; every finite `f64` maps to a value.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `c = a' * b' + beta * c` where `a'` is `a` or its transpose.
///
/// `a` is stored row-major as `[m, k]` (or `[k, m]` when `trans_a`), `b` as
/// `[k, n]` (or `[n, k]` when `trans_b`), and `c` as `[m, n]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    beta: T,
    c: &mut [T],
) {
    let a = if trans_a {
        ArrayView2::from_shape((k, m), a)
            .expect("lhs extent")
            .reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).expect("lhs extent")
    };
    let b = if trans_b {
        ArrayView2::from_shape((n, k), b)
            .expect("rhs extent")
            .reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).expect("rhs extent")
    };
    let mut c = ArrayViewMut2::from_shape((m, n), c).expect("output extent");
    general_mat_mul(T::one(), &a, &b, beta, &mut c);
}
