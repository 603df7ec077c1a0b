use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type of the numeric core: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; constants in the code are written as `f64`.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every float type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }

    fn as_f32(self) -> f32 {
        self.to_f32().expect("float converts to f32")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
