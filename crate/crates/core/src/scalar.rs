//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type the model, losses and prototype memory are
/// generic over. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for configuration constants.
    fn of(v: f64) -> Self;

    /// Widening conversion to `f64`, used for persistence and reporting.
    fn to_f64_lossless(self) -> f64;

    /// Round-trip conversion through the on-disk `f32` image encoding.
    fn from_stored(v: f32) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self as f64
    }

    #[inline]
    fn from_stored(v: f32) -> Self {
        v
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }

    #[inline]
    fn from_stored(v: f32) -> Self {
        v as f64
    }
}
