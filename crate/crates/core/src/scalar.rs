//! Scalar abstraction shared by the numerical modules.

use std::fmt::Debug;

use nalgebra::RealField;
use num_traits::FromPrimitive;

/// Floating-point type the trace functionals are generic over.
///
/// The associated tolerances scale the fixed thresholds used by the
/// validators (symmetry, PSD, zero eigenvalues) to the precision of the type.
pub trait Real: RealField + Copy + FromPrimitive + Debug + Send + Sync + 'static {
    /// Eigenvalues below this fraction of the largest one are treated as zero.
    const ZERO_EIGEN_RTOL: f64;
    /// Allowed asymmetry / negative eigenvalue relative to the largest magnitude.
    const SYMMETRY_RTOL: f64;
    /// Unit round-off.
    const EPSILON: f64;

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    fn as_f64(self) -> f64;
}

impl Real for f64 {
    const ZERO_EIGEN_RTOL: f64 = 1e-12;
    const SYMMETRY_RTOL: f64 = 1e-10;
    const EPSILON: f64 = f64::EPSILON;

    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    const ZERO_EIGEN_RTOL: f64 = 1e-6;
    const SYMMETRY_RTOL: f64 = 1e-5;
    const EPSILON: f64 = f32::EPSILON as f64;

    fn as_f64(self) -> f64 {
        self as f64
    }
}
