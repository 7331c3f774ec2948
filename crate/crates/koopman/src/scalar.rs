use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Scalar type all numeric code in this crate is generic over.
///
/// The crate is written against this trait rather than a fixed float width;
/// `f32` and `f64` are the supported instantiations (see the aliases at the
/// crate root). Conversions from literal `f64` constants are lossy for `f32`
/// but deterministic, which is what seeded reproducibility needs.
pub trait Scalar:
    RealField + FromPrimitive + ToPrimitive + Copy + Default + std::fmt::LowerExp + std::fmt::Display
{
    fn from_f64_lossy(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
    fn is_finite_scalar(self) -> bool;
}

impl Scalar for f64 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
    #[inline]
    fn is_finite_scalar(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
    #[inline]
    fn is_finite_scalar(self) -> bool {
        self.is_finite()
    }
}
