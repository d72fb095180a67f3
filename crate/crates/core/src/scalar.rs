//! Scalar abstraction shared by every kernel.
//!
//! The production path runs in `f32`; `f64` exists so finite-difference
//! gradient checks are not swamped by round-off.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Short dtype tag used in diagnostics.
    const DTYPE: &'static str;

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 fits every scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "real32";
}

impl Scalar for f64 {
    const DTYPE: &'static str = "real64";
}
