//! Scalar abstraction: the numeric element type for all dense math.
//!
//! Everything in this crate is generic over [`Scalar`] so the same code runs
//! in f32 or f64. The shipped pipeline (CLI, checkpoints, acceptance runs)
//! instantiates f64; see the type aliases at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type: f32 or f64.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for lifting an f64 literal into the generic scalar type.
#[inline]
pub fn lit<F: Scalar>(v: f64) -> F {
    F::from_f64(v).expect("literal representable in scalar type")
}
