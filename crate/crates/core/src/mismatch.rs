//! The mismatch equation
//!
//! ```text
//! A_recv(y0, y) = y · y0ᵀ Σ A / (y0ᵀ Σ y0)
//! ```
//!
//! maps a measurement `y` taken through an unknown matrix onto a matrix that
//! reproduces `y` for every image `x` with `A·x = y0`. Applied to an arbitrary
//! image it only rescales its left factor by `k(x) = y0ᵀΣAx / y0ᵀΣy0`, which
//! drives both the error iteration and its convergence factor `|1 - k(x)|`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::operator::MismatchTerm;
use crate::real::Real;
use crate::types::{validate_dims, Image, MeasurementMatrix, MeasurementVector, SigmaMatrix};

/// Σ = (AAᵀ)⁻¹, the default special solution.
///
/// Fails with [`Error::RankDeficient`] when the smallest singular value of
/// `A` is below `eps · max(M, N) · σ_max`.
pub fn default_sigma<T: Real>(a: &MeasurementMatrix<T>) -> Result<SigmaMatrix<T>> {
    let gram = a.entries() * a.entries().transpose();
    let eig = gram.clone().symmetric_eigenvalues();
    let lambda_max = eig.iter().fold(T::zero(), |m, v| m.max(*v));
    let lambda_min = eig.iter().fold(lambda_max, |m, v| m.min(*v));
    let sigma_max = lambda_max.max(T::zero()).sqrt().as_f64();
    let sigma_min = lambda_min.max(T::zero()).sqrt().as_f64();
    let (m, n) = a.shape();
    let tol = T::eps().as_f64() * m.max(n) as f64 * sigma_max;
    if !(sigma_min > tol) {
        return Err(Error::RankDeficient {
            smallest: sigma_min,
            tol,
        });
    }
    let chol = gram.cholesky().ok_or(Error::RankDeficient {
        smallest: sigma_min,
        tol,
    })?;
    let inv = chol.inverse();
    let sym = (&inv + inv.transpose()) * T::of_f64(0.5);
    SigmaMatrix::new(sym)
}

/// Everything in the mismatch equation that depends only on the pre-measure
/// `(y0, Σ, A)`: the scale `1 / y0ᵀΣy0` and the right factor `AᵀΣᵀy0`.
///
/// Every term produced by one `PreMeasure` shares the same right factor.
#[derive(Debug, Clone)]
pub struct PreMeasure<T: Real> {
    y0: MeasurementVector<T>,
    denom: T,
    scale: T,
    right: Arc<DVector<T>>,
}

impl<T: Real> PreMeasure<T> {
    pub fn new(
        y0: &MeasurementVector<T>,
        sigma: &SigmaMatrix<T>,
        a: &MeasurementMatrix<T>,
    ) -> Result<Self> {
        Self::with_index(y0, sigma, a, None)
    }

    pub(crate) fn with_index(
        y0: &MeasurementVector<T>,
        sigma: &SigmaMatrix<T>,
        a: &MeasurementMatrix<T>,
        index: Option<usize>,
    ) -> Result<Self> {
        let m = a.rows();
        if y0.len() != m || sigma.dim() != m {
            return Err(Error::DimensionMismatch {
                context: "pre-measure y0 / sigma vs matrix rows",
                left: (y0.len(), sigma.dim()),
                right: a.shape(),
            });
        }
        let s = sigma.entries();
        let st_y0 = s.tr_mul(y0.values());
        let denom = y0.values().dot(&(s * y0.values()));
        check_denominator(denom, y0.values(), s, index)?;
        let right = a.entries().tr_mul(&st_y0);
        Ok(PreMeasure {
            y0: y0.clone(),
            denom,
            scale: T::one() / denom,
            right: Arc::new(right),
        })
    }

    pub fn y0(&self) -> &MeasurementVector<T> {
        &self.y0
    }

    /// `y0ᵀ Σ y0`.
    pub fn denominator(&self) -> T {
        self.denom
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn right(&self) -> &Arc<DVector<T>> {
        &self.right
    }

    /// The term `A_recv(y0, left)`.
    pub fn term(&self, left: DVector<T>) -> MismatchTerm<T> {
        MismatchTerm::new(self.scale, left, self.right.clone())
    }

    /// Multiplier coefficient `k(x)`.
    pub fn coefficient(&self, x: &DVector<T>) -> T {
        self.scale * self.right.dot(x)
    }
}

fn check_denominator<T: Real>(
    denom: T,
    y0: &DVector<T>,
    sigma: &DMatrix<T>,
    index: Option<usize>,
) -> Result<()> {
    let y0_sq = y0.norm_squared().as_f64();
    let tol = T::PRECISION.denom_tol() * y0_sq * sigma.norm().as_f64();
    let d = denom.as_f64();
    if !d.is_finite() || d.abs() <= tol {
        return Err(Error::DegenerateDenominator {
            value: d,
            tol,
            index,
        });
    }
    Ok(())
}

/// A single mismatch term `A_recv(y0, y)`.
pub fn mismatch_term<T: Real>(
    y: &MeasurementVector<T>,
    y0: &MeasurementVector<T>,
    sigma: &SigmaMatrix<T>,
    a: &MeasurementMatrix<T>,
) -> Result<MismatchTerm<T>> {
    if y.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            context: "measurement y vs matrix rows",
            left: (y.len(), 1),
            right: a.shape(),
        });
    }
    Ok(PreMeasure::new(y0, sigma, a)?.term(y.values().clone()))
}

/// `k(x) = y0ᵀΣAx / y0ᵀΣy0`.
pub fn multiplier_coefficient<T: Real>(
    y0: &MeasurementVector<T>,
    sigma: &SigmaMatrix<T>,
    a: &MeasurementMatrix<T>,
    x: &Image<T>,
) -> Result<T> {
    validate_dims(a, x)?;
    Ok(PreMeasure::new(y0, sigma, a)?.coefficient(x.pixels()))
}

/// `|1 - k(x)|`, the ratio by which each error-iteration step shrinks the
/// residual.
pub fn convergence_factor<T: Real>(
    y0: &MeasurementVector<T>,
    sigma: &SigmaMatrix<T>,
    a: &MeasurementMatrix<T>,
    x: &Image<T>,
) -> Result<T> {
    let k = multiplier_coefficient(y0, sigma, a, x)?;
    Ok((T::one() - k).abs())
}
