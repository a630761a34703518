use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Floating-point element type of every array in the crate.
pub trait Scalar: NdFloat + FromPrimitive + Default {
    /// Converts an `f64` literal into `Self`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
