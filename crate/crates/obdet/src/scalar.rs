//! Scalar abstraction for the numeric kernels.
//!
//! Everything geometric in this crate is written against [`Real`] so the same
//! code instantiates at `f32` and `f64`. The crate-root aliases fix `f64`,
//! which is the precision the reference results and test tolerances assume.

use std::fmt::{Debug, Display};

use num_traits::float::FloatConst;
use num_traits::{Float, FromPrimitive, NumCast};

/// Floating-point scalar usable by every kernel in this crate.
///
/// Blanket-implemented for any type with the listed capabilities; in practice
/// that means `f32` and `f64`.
pub trait Real:
    Float + FloatConst + NumCast + FromPrimitive + Debug + Display + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: Float + FloatConst + NumCast + FromPrimitive + Debug + Display + Send + Sync + 'static
{
}

/// Converts an `f64` literal into the working scalar type.
///
/// Panics only if the target type cannot represent any finite value of the
/// argument's magnitude, which does not happen for the constants used here.
#[inline]
pub(crate) fn real<F: Real>(x: f64) -> F {
    F::from(x).expect("constant representable in scalar type")
}
