//! Floating-point width used by solver arithmetic.
//!
//! Everything numeric in this crate is generic over [`Real`], implemented for
//! `f32` and `f64` only. A run instantiated at `f32` never touches `f64`
//! except when converting scalar summaries for reporting.

use std::fmt;
use std::str::FromStr;

use nalgebra::RealField;

/// Scalar type used by the solvers.
pub trait Real: RealField + Copy + fmt::Display + fmt::LowerExp + Send + Sync + 'static {
    /// The matching [`Precision`] tag.
    const PRECISION: Precision;

    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Machine epsilon.
    fn eps() -> Self;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::Single;

    #[inline]
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn eps() -> Self {
        f32::EPSILON
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::Double;

    #[inline]
    fn of_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn eps() -> Self {
        f64::EPSILON
    }
}

/// Precision mode of a run. Fixed for the lifetime of a solve and recorded
/// in every output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Single => "single",
            Precision::Double => "double",
        }
    }

    /// Significant digits needed to round-trip a value of this width.
    pub fn significant_digits(self) -> usize {
        match self {
            Precision::Single => 9,
            Precision::Double => 17,
        }
    }

    /// Relative guard for `y0ᵀ Σ y0` denominators.
    pub fn denom_tol(self) -> f64 {
        match self {
            Precision::Single => 1e-6,
            Precision::Double => 1e-12,
        }
    }

    /// Upper bound on cond(YᵀY) accepted by the calibration solver.
    pub fn cond_bound(self) -> f64 {
        match self {
            Precision::Single => 1e4,
            Precision::Double => 1e8,
        }
    }

    /// Relative threshold below which a component of `y_pm` counts as zero.
    pub fn zero_tol(self) -> f64 {
        match self {
            Precision::Single => 1e-5,
            Precision::Double => 1e-10,
        }
    }

    /// Default early-exit level of the error iteration, relative to `‖y‖∞`.
    /// Far enough above the rounding floor that every recorded step still
    /// follows the geometric law.
    pub fn stop_tol(self) -> f64 {
        match self {
            Precision::Single => 1e-5,
            Precision::Double => 1e-9,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            other => Err(format!("unknown precision `{other}` (expected single or double)")),
        }
    }
}
