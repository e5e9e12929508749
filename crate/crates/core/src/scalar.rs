//! Floating-point abstraction shared by the closed-form physics and the filter models.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive};

/// Real scalar usable by the closed-form models: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Every finite literal used in this crate is representable.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Angular frequency (rad/s) from an ordinary frequency in GHz.
#[inline]
pub fn from_ghz<T: Scalar>(ghz: T) -> T {
    ghz * T::TAU() * T::lit(1e9)
}

/// Ordinary frequency in GHz from an angular frequency (rad/s).
#[inline]
pub fn to_ghz<T: Scalar>(omega: T) -> T {
    omega / (T::TAU() * T::lit(1e9))
}

/// Seconds from picoseconds.
#[inline]
pub fn from_ps<T: Scalar>(ps: T) -> T {
    ps * T::lit(1e-12)
}

/// Picoseconds from seconds.
#[inline]
pub fn to_ps<T: Scalar>(s: T) -> T {
    s * T::lit(1e12)
}
