//! Scalar abstraction so the math runs in f32 for training and f64 where
//! tests want tighter tolerances.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + 'static
{
    fn real(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 conversion")
    }
    fn real32(x: f32) -> Self {
        <Self as FromPrimitive>::from_f32(x).expect("f32 conversion")
    }
    fn count(x: usize) -> Self {
        <Self as FromPrimitive>::from_usize(x).expect("usize conversion")
    }
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("finite scalar")
    }
    fn to_f32_lossy(self) -> f32 {
        ToPrimitive::to_f32(&self).expect("finite scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
