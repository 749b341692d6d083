//! Floating-point abstraction for the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
///
/// Everything the law, the fitter, and the optimizer need; blanket-implemented
/// so downstream code never names the bound list.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + 'static
{
    /// Shorthand for lossy conversion from `f64` constants.
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable in scalar type")
    }

    /// Lossy widening to `f64` for reporting and serialization.
    fn to_f64c(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + 'static
{
}
