use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, NumCast, ToPrimitive};

/// Floating point scalar the numeric core is written against: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumCast
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from an `f64` literal.
    fn of(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("finite scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
