//! Scalar abstraction: the whole numeric stack is generic over the element
//! type, with `f32` for training and `f64` for gradient verification.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float
    + NumAssign
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of_f64(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;

    /// Raw little-endian byte width when serialized (checkpoints are f32-only;
    /// see the checkpoint format).
    const DTYPE_CODE: u8;
}

impl Scalar for f32 {
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
    const DTYPE_CODE: u8 = 0;
}

impl Scalar for f64 {
    fn of_f64(v: f64) -> Self {
        v
    }
    fn to_f64_lossy(self) -> f64 {
        self
    }
    const DTYPE_CODE: u8 = 1;
}

/// Shorthand for lifting an `f64` literal into any scalar type.
pub fn sc<T: Scalar>(v: f64) -> T {
    T::of_f64(v)
}
