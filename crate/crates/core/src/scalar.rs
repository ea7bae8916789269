//! Scalar abstraction for utilities, gains and rewards.
//!
//! Every numeric path in the engine is generic over [`Scalar`], so the same
//! code runs on `f32`, `f64` or an exact rational type. Floating types compare
//! with a small absolute tolerance; the rational type compares exactly.

use std::fmt::{Debug, Display};

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Numeric type usable for utilities, marginal gains and rewards.
pub trait Scalar:
    Num
    + Copy
    + PartialOrd
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Absolute tolerance for equality and tie detection. Zero for exact types.
    fn tolerance() -> Self;

    /// Converts a unit count. Counts are small enough to be exact in every
    /// supported type.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    fn abs_diff(self, other: Self) -> Self {
        if self >= other {
            self - other
        } else {
            other - self
        }
    }

    fn approx_eq(self, other: Self) -> bool {
        self.abs_diff(other) <= Self::tolerance()
    }

    /// Lossy conversion used only for reporting.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn tolerance() -> Self {
        1e-9
    }
}

impl Scalar for f32 {
    // 1e-9 is below f32 resolution for values near 1.
    fn tolerance() -> Self {
        1e-6
    }
}

impl Scalar for Ratio<i64> {
    fn tolerance() -> Self {
        Ratio::from_integer(0)
    }
}
