//! Scalar abstraction for the numeric core.
//!
//! Every algorithm in this crate is written against [`Scalar`] so the same
//! code runs in `f32` or `f64`. The command-line tools and the serialized
//! file formats use `f64`; see the `*64` aliases at the crate root.

use std::fmt;

use num_traits::Float;

/// Floating-point scalar the numeric core is generic over.
///
/// Conversions go through `f64`, which is exact for every `f32` value, so
/// serialization can always widen to `f64` and narrow back losslessly.
pub trait Scalar:
    Float
    + num_traits::NumAssignOps
    + fmt::Debug
    + fmt::Display
    + fmt::LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn into_f64(self) -> f64 {
        self
    }
}

/// Shorthand for lifting an `f64` literal into the working scalar type.
#[inline]
pub fn s<S: Scalar>(v: f64) -> S {
    S::from_f64(v)
}
