//! Scalar abstraction: the numeric core is generic over the floating type.
//!
//! Everything that does arithmetic (kernels, transfer-matrix evolutions,
//! statistics contractions) works for any [`Scalar`]; `f64` is the default
//! used by the oracles and the CLI, `f32` is available for quick sweeps.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
}

impl<T> Scalar for T where
    T: Float
        + FloatConst
        + NumAssign
        + FromPrimitive
        + ToPrimitive
        + std::iter::Sum
        + std::fmt::Debug
        + std::fmt::Display
        + Send
        + Sync
        + 'static
{
}

/// Convert an `f64` constant into the working scalar.
#[inline]
pub fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("f64 -> scalar conversion")
}

/// Convert the working scalar back to `f64` (for reporting).
#[inline]
pub fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().expect("scalar -> f64 conversion")
}
