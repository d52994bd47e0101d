//! Floating point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar the networks, losses and learners are generic over.
///
/// Observations are always stored as `f32`; they are widened (or kept) on the
/// way into a model via [`Scalar::widen_f32`].
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn widen_f32(value: f32) -> Self;

    fn lit(value: f64) -> Self;

    fn narrow_f32(self) -> f32;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn widen_f32(value: f32) -> Self {
        value
    }

    #[inline]
    fn lit(value: f64) -> Self {
        value as f32
    }

    #[inline]
    fn narrow_f32(self) -> f32 {
        self
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn widen_f32(value: f32) -> Self {
        value as f64
    }

    #[inline]
    fn lit(value: f64) -> Self {
        value
    }

    #[inline]
    fn narrow_f32(self) -> f32 {
        self as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
