//! Floating-point scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` constant.
    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable")
    }

    /// Conversion from a count.
    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Logistic sigmoid, evaluated without overflow for large |a|.
#[inline]
pub fn sigmoid<T: Scalar>(a: T) -> T {
    if a >= T::zero() {
        T::one() / (T::one() + (-a).exp())
    } else {
        let e = a.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + e^a)` without overflow.
#[inline]
pub fn softplus<T: Scalar>(a: T) -> T {
    if a > T::zero() {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}
