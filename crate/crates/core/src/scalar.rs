use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar used by the reward model, the loss and the optimizer.
///
/// Implemented for `f32` and `f64`. Text-side quantities (scores, margins,
/// feature vectors) are kept in `f64` and converted with [`Scalar::of`] at
/// the model boundary.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Short dtype tag written into model and checkpoint headers.
    const DTYPE: &'static str;

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
}

/// `max(z, 0)`.
#[inline]
pub fn relu<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z
    } else {
        T::zero()
    }
}

/// Subgradient of [`relu`]: 1 strictly above the kink, 0 at and below it.
#[inline]
pub fn relu_grad<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

/// Sign with `sign(0) = 0`, unlike `Float::signum`.
#[inline]
pub fn sign0<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        T::one()
    } else if z < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
