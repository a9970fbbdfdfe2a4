use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point type the LP routines are written against.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static {
    /// Magnitude below which a pivot candidate is treated as zero.
    fn pivot_tolerance() -> Self;

    /// Default feasibility tolerance for a solve.
    fn default_feastol() -> Self;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }
}

impl Scalar for f64 {
    fn pivot_tolerance() -> Self {
        1e-9
    }

    fn default_feastol() -> Self {
        1e-8
    }
}

impl Scalar for f32 {
    fn pivot_tolerance() -> Self {
        1e-5
    }

    fn default_feastol() -> Self {
        1e-4
    }
}
