use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar used throughout the audit math (`f32` or `f64`).
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Significand precision in bits, including the implicit leading bit.
    const MANTISSA_DIGITS: u32;

    /// Lossless for integers below `2^MANTISSA_DIGITS`.
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("u64 always converts to a float")
    }

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal converts")
    }
}

impl Scalar for f32 {
    const MANTISSA_DIGITS: u32 = f32::MANTISSA_DIGITS;
}

impl Scalar for f64 {
    const MANTISSA_DIGITS: u32 = f64::MANTISSA_DIGITS;
}
