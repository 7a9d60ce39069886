//! Scalar abstraction shared by every numeric routine in the crate.

use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Floating point element type: `f32` or `f64`.
pub trait Real: NdFloat + FromPrimitive + Default {
    /// Converts an `f64` literal into `Self`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
