use core::fmt::{Debug, Display};

use num_traits::Float;

/// Floating point type the engine computes in. Training runs in `f32`;
/// `f64` is available for gradient verification.
pub trait Scalar: Float + Default + Debug + Display + Send + Sync + 'static {
    const NAME: &'static str;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[inline]
pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}
