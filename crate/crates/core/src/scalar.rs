//! Scalar abstraction for the numeric core.
//!
//! Everything under [`crate::tensor`] and the model layers is generic over a
//! floating scalar so the same kernels run at `f32` or `f64`. The crate root
//! pins `f64` aliases for the pipeline; checkpoints always store 64-bit
//! payloads regardless of the in-memory scalar.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Floating scalar usable as tensor element type.
pub trait Scalar:
    Float + Sum<Self> + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64` (exact for `f64` itself).
    fn from_f64(v: f64) -> Self;

    /// Widening conversion to `f64` (named to avoid clashing with `ToPrimitive`).
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
