//! Scalar abstraction shared by the transport and matching code.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the numerical core is generic over (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + LowerExp + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal, panicking only on a broken `FromPrimitive` impl.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("scalar conversion from f64")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar conversion to f64")
    }

    /// Smallest denominator the solvers divide by. Requests below the type's
    /// smallest positive normal value are raised to it.
    fn clamp_floor(requested: f64) -> Self {
        let floor = Self::from_f64(requested).unwrap_or_else(Self::zero);
        floor.max(Self::min_positive_value())
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
