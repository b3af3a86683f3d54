use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Scalar trait for the geometry and loss math (`f32`, `f64`).
pub trait Real:
    Float + FloatConst + NumAssign + FromPrimitive + ToPrimitive + Sum + Copy + Debug + Default + 'static
{
    fn two() -> Self {
        Self::one() + Self::one()
    }

    fn half() -> Self {
        Self::one() / Self::two()
    }
}

impl Real for f32 {}
impl Real for f64 {}
