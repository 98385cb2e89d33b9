//! Element type abstraction: f64 for tests and reference runs, f32 for speed.

use num_traits::Float;

/// Floating-point element type used by tensors, networks and the optimizer.
///
/// All numeric code is generic over this trait so a whole training run can be
/// instantiated at 64-bit (the reference precision, assumed by every gradient
/// tolerance in the test suite) or 32-bit.
pub trait Scalar:
    Float
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    const BITS: u32;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f64 {
    const BITS: u32 = 64;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    const BITS: u32 = 32;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
}
