//! Floating-point abstraction shared by the numerical modules.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar the estimators are generic over: `f32` or `f64`.
///
/// Random variates are generated in `f64` and narrowed with [`Scalar::lit`],
/// so the same seed gives the same sampling path for either precision.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Default + Serialize + DeserializeOwned
{
    /// Converts an `f64` constant into `Self`.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite f64 converts to every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Machine epsilon of the concrete type.
    fn eps() -> Self;
}

impl Scalar for f32 {
    fn eps() -> Self {
        f32::EPSILON
    }
}

impl Scalar for f64 {
    fn eps() -> Self {
        f64::EPSILON
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn logistic<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + exp(x))`, stable for both tails.
pub fn log1p_exp<T: Scalar>(x: T) -> T {
    if x > T::lit(35.0) {
        x
    } else if x < T::lit(-35.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}
