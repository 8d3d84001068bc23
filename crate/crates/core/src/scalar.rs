use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point storage type for embeddings and model parameters.
///
/// Reductions (dot products, norms, means) widen to `f64` through
/// [`Scalar::to_f64_lossless`] and narrow back with [`Scalar::from_f64_lossy`].
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    fn to_f64_lossless(self) -> f64;

    fn from_f64_lossy(v: f64) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self as f64
    }

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}

/// Dot product with `f64` accumulation in index order.
#[inline]
pub(crate) fn dot_f64<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |acc, (&x, &y)| acc + x.to_f64_lossless() * y.to_f64_lossless())
}

/// Squared Euclidean distance with `f64` accumulation.
#[inline]
pub(crate) fn sq_dist_f64<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (&x, &y)| {
        let d = x.to_f64_lossless() - y.to_f64_lossless();
        acc + d * d
    })
}
