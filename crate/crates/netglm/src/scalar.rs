//! Floating-point abstraction for the numeric kernels.
//!
//! Everything numeric in this crate is generic over [`Scalar`] so the same
//! kernels run in `f32` or `f64`. The experiment harness and the CLI pin
//! `f64` through the aliases exported at the crate root.

use ndarray::NdFloat;
use num_traits::FromPrimitive;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Real scalar type the library is generic over.
///
/// `NdFloat` brings in the usual float operations plus the bounds `ndarray`
/// wants for arithmetic on arrays. The extra methods cover the two places a
/// bare `Float` is not enough: converting literal constants and drawing
/// standard normal variates.
pub trait Scalar: NdFloat + FromPrimitive + std::iter::Sum<Self> {
    /// Convert an `f64` constant, panicking on NaN-free overflow is fine
    /// because every constant in this crate is representable in `f32`.
    fn from_f(x: f64) -> Self;

    /// Widen to `f64` (lossless for both supported types).
    fn to_f(self) -> f64;

    /// Draw one standard normal variate from `rng`.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn from_f(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f(self) -> f64 {
        self
    }

    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_f(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f(self) -> f64 {
        f64::from(self)
    }

    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}
