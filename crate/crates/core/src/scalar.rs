//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    /// Converts a count into the scalar type.
    #[inline]
    fn count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Lossy conversion for reporting.
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Tolerance floor for iterative solves: `max(tol, 100 eps)`.
    #[inline]
    fn solver_tol(tol: f64) -> Self {
        Self::lit(tol).max(Self::epsilon() * Self::lit(100.0))
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Point or covector on the torus. Only the first `dim` components are used.
pub type Vector<T> = [T; 2];

#[inline]
pub(crate) fn zero_vec<T: Real>() -> Vector<T> {
    [T::zero(); 2]
}

#[inline]
pub(crate) fn dot<T: Real>(a: &Vector<T>, b: &Vector<T>, dim: usize) -> T {
    let mut s = T::zero();
    for k in 0..dim {
        s += a[k] * b[k];
    }
    s
}

#[inline]
pub(crate) fn norm<T: Real>(a: &Vector<T>, dim: usize) -> T {
    dot(a, a, dim).sqrt()
}
