use std::fmt::LowerExp;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point type the estimator can run on.
///
/// Linear algebra goes through nalgebra, so `RealField` carries the
/// arithmetic; num-traits supplies the conversions used for literals and
/// for reporting.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + LowerExp + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the target cannot represent
    /// finite doubles at all, which no supported type does.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::lit(n as f64)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Tolerance used for relative pivot checks in the small dense solves.
    fn pivot_tolerance() -> Self;
}

impl Scalar for f32 {
    fn pivot_tolerance() -> Self {
        1e-6
    }
}

impl Scalar for f64 {
    fn pivot_tolerance() -> Self {
        1e-13
    }
}
