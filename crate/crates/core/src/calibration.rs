//! Calibration solution: one constructed matrix valid for every image in the
//! span of a set of basis images.
//!
//! With basis `Q` (N×M, usually from the QR factorization of `Aᵀ`),
//! pre-measurements `Y = (A·Q)ᵀ` and oracle responses `Y_u`, the calibrated
//! matrix is `Σ_j A_recv(Y[j,:], Y_u[:,j])` with `Σ = (YᵀY)⁻¹`. That Σ makes
//! `YΣYᵀ = I`, so the cross coefficients `k(i, j)` vanish off the diagonal
//! and the basis terms do not interfere.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mismatch::PreMeasure;
use crate::operator::FactoredRecvMatrix;
use crate::real::Real;
use crate::sim::MeasurementOracle;
use crate::types::{Image, MeasurementMatrix, MeasurementVector, SigmaMatrix};

/// Basis images stored as the columns of an N×D matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet<T: Real> {
    q: DMatrix<T>,
    orthonormality_residual: f64,
}

impl<T: Real> BasisSet<T> {
    /// Wraps arbitrary basis columns, recording `‖QᵀQ - I‖∞`.
    pub fn from_columns(q: DMatrix<T>) -> Self {
        let residual = orthonormality_residual(&q);
        BasisSet {
            q,
            orthonormality_residual: residual,
        }
    }

    pub fn q(&self) -> &DMatrix<T> {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.q.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.q.ncols() == 0
    }

    pub fn orthonormality_residual(&self) -> f64 {
        self.orthonormality_residual
    }

    pub fn column(&self, j: usize) -> DVector<T> {
        self.q.column(j).into_owned()
    }

    /// Replaces the given columns with images, each rescaled to unit 2-norm.
    /// The basis stops being orthogonal; the new residual is recorded.
    pub fn substitute(&self, replacements: &[(usize, &Image<T>)]) -> Result<Self> {
        let mut q = self.q.clone();
        for (j, img) in replacements {
            if *j >= q.ncols() {
                return Err(Error::InvalidInput(format!(
                    "basis column {j} out of range (basis has {})",
                    q.ncols()
                )));
            }
            if img.len() != q.nrows() {
                return Err(Error::DimensionMismatch {
                    context: "substituted image vs basis length",
                    left: (img.len(), 1),
                    right: q.shape(),
                });
            }
            let norm = img.pixels().norm();
            if norm == T::zero() {
                return Err(Error::InvalidInput("cannot substitute a zero image".into()));
            }
            q.set_column(*j, &(img.pixels() / norm));
        }
        Ok(Self::from_columns(q))
    }
}

fn orthonormality_residual<T: Real>(q: &DMatrix<T>) -> f64 {
    let g = q.tr_mul(q);
    let eye = DMatrix::<T>::identity(g.nrows(), g.ncols());
    (g - eye).amax().as_f64()
}

/// Orthonormal basis of the row space of `A` from the QR factorization of
/// `Aᵀ`.
pub fn orthonormal_basis<T: Real>(a: &MeasurementMatrix<T>) -> Result<BasisSet<T>> {
    let qr = a.entries().transpose().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..r.nrows()).map(|i| r[(i, i)].abs().as_f64()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let (m, n) = a.shape();
    let tol = T::eps().as_f64() * m.max(n) as f64 * max;
    if !(min > tol) {
        return Err(Error::RankDeficient { smallest: min, tol });
    }
    Ok(BasisSet::from_columns(qr.q()))
}

/// Pre-measurements of every basis image, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PremeasureSet<T: Real> {
    y: DMatrix<T>,
}

impl<T: Real> PremeasureSet<T> {
    pub fn from_rows(y: DMatrix<T>) -> Self {
        PremeasureSet { y }
    }

    /// `Y`, D×M.
    pub fn y(&self) -> &DMatrix<T> {
        &self.y
    }

    /// `y_j⁰ = A·x_j`.
    pub fn row(&self, j: usize) -> DVector<T> {
        self.y.row(j).transpose()
    }
}

/// `Y = (A·Q)ᵀ`.
pub fn premeasure_basis<T: Real>(
    a: &MeasurementMatrix<T>,
    basis: &BasisSet<T>,
) -> Result<PremeasureSet<T>> {
    if basis.q().nrows() != a.cols() {
        return Err(Error::DimensionMismatch {
            context: "basis image length vs matrix columns",
            left: basis.q().shape(),
            right: a.shape(),
        });
    }
    Ok(PremeasureSet {
        y: (a.entries() * basis.q()).transpose(),
    })
}

/// 2-norm condition number of a symmetric positive semi-definite matrix.
fn spd_condition<T: Real>(g: &DMatrix<T>) -> f64 {
    let eig = g.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.as_f64()));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `Σ = (YᵀY)⁻¹` together with cond(YᵀY).
pub fn calibration_sigma_with_bound<T: Real>(
    pm: &PremeasureSet<T>,
    cond_bound: f64,
) -> Result<(SigmaMatrix<T>, f64)> {
    let y = pm.y();
    if y.nrows() < y.ncols() {
        return Err(Error::RankDeficient {
            smallest: 0.0,
            tol: 0.0,
        });
    }
    let gram = y.tr_mul(y);
    let cond = spd_condition(&gram);
    if !(cond <= cond_bound) {
        return Err(Error::IllConditioned {
            cond,
            bound: cond_bound,
        });
    }
    let inv = gram
        .cholesky()
        .ok_or(Error::IllConditioned {
            cond,
            bound: cond_bound,
        })?
        .inverse();
    let sym = (&inv + inv.transpose()) * T::of_f64(0.5);
    Ok((SigmaMatrix::new(sym)?, cond))
}

/// `Σ = (YᵀY)⁻¹` with the default condition bound for the precision.
pub fn calibration_sigma<T: Real>(pm: &PremeasureSet<T>) -> Result<SigmaMatrix<T>> {
    calibration_sigma_with_bound(pm, T::PRECISION.cond_bound()).map(|(s, _)| s)
}

/// `K[(i, j)] = k(i, j) = (y_j⁰ᵀ Σ y_i⁰) / (y_j⁰ᵀ Σ y_j⁰)`.
pub fn cross_coefficients<T: Real>(
    pm: &PremeasureSet<T>,
    sigma: &SigmaMatrix<T>,
) -> Result<DMatrix<T>> {
    let y = pm.y();
    if sigma.dim() != y.ncols() {
        return Err(Error::DimensionMismatch {
            context: "sigma vs pre-measurement length",
            left: (sigma.dim(), sigma.dim()),
            right: y.shape(),
        });
    }
    // G[(j, i)] = y_jᵀ Σ y_i
    let g = y * sigma.entries() * y.transpose();
    let d = y.nrows();
    let tol_base = T::PRECISION.denom_tol() * sigma.entries().norm().as_f64();
    let mut k = DMatrix::zeros(d, d);
    for j in 0..d {
        let denom = g[(j, j)];
        let tol = tol_base * y.row(j).norm_squared().as_f64();
        if !(denom.as_f64().abs() > tol) {
            return Err(Error::DegenerateDenominator {
                value: denom.as_f64(),
                tol,
                index: Some(j),
            });
        }
        for i in 0..d {
            k[(i, j)] = g[(j, i)] / denom;
        }
    }
    Ok(k)
}

/// Greedily assigns each image the free basis column with the largest
/// `|q_jᵀ x| / ‖x‖`. Replacing the most aligned column keeps the substituted
/// basis far from degenerate.
pub fn aligned_slots<T: Real>(
    basis: &BasisSet<T>,
    images: &[&Image<T>],
    taken: &[usize],
) -> Result<Vec<usize>> {
    let mut used = vec![false; basis.len()];
    for &j in taken {
        if j < used.len() {
            used[j] = true;
        }
    }
    let mut slots = Vec::with_capacity(images.len());
    for img in images {
        if img.len() != basis.q.nrows() {
            return Err(Error::DimensionMismatch {
                context: "span image vs basis image length",
                left: (img.len(), 1),
                right: basis.q.shape(),
            });
        }
        let proj = basis.q.tr_mul(img.pixels());
        let best = (0..basis.len())
            .filter(|&j| !used[j])
            .max_by(|&i, &k| {
                proj[i]
                    .abs()
                    .partial_cmp(&proj[k].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .ok_or_else(|| Error::InvalidInput("more span images than basis columns".into()))?;
        used[best] = true;
        slots.push(best);
    }
    Ok(slots)
}

#[derive(Debug, Clone)]
pub struct CalibrationConfig<T: Real> {
    /// Basis columns to overwrite with given images before measuring.
    pub substitutions: Vec<(usize, Image<T>)>,
    /// Images to bring into the span, each placed in the not yet replaced
    /// column it is most aligned with. Applied after `substitutions`.
    pub span_images: Vec<Image<T>>,
    /// Overrides the precision's default bound on cond(YᵀY).
    pub cond_bound: Option<f64>,
}

impl<T: Real> Default for CalibrationConfig<T> {
    fn default() -> Self {
        CalibrationConfig {
            substitutions: Vec::new(),
            span_images: Vec::new(),
            cond_bound: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationReport<T: Real> {
    pub basis: BasisSet<T>,
    pub orthonormality_residual: f64,
    /// cond(YᵀY).
    pub cond_gram: f64,
    /// `max_{i≠j} |k(i, j)|`.
    pub max_offdiag_k: f64,
    pub oracle_calls: u64,
}

/// Calibrates against the oracle's unknown matrix with M basis measurements.
pub fn calibrate<T: Real>(
    oracle: &mut MeasurementOracle<T>,
    a: &MeasurementMatrix<T>,
    cfg: &CalibrationConfig<T>,
) -> Result<(FactoredRecvMatrix<T>, CalibrationReport<T>)> {
    let mut basis = orthonormal_basis(a)?;
    let mut reps: Vec<(usize, &Image<T>)> =
        cfg.substitutions.iter().map(|(j, img)| (*j, img)).collect();
    let taken: Vec<usize> = reps.iter().map(|(j, _)| *j).collect();
    let images: Vec<&Image<T>> = cfg.span_images.iter().collect();
    for (j, img) in aligned_slots(&basis, &images, &taken)?.into_iter().zip(images) {
        reps.push((j, img));
    }
    if !reps.is_empty() {
        basis = basis.substitute(&reps)?;
    }
    let pm = premeasure_basis(a, &basis)?;
    let bound = cfg.cond_bound.unwrap_or(T::PRECISION.cond_bound());
    let (sigma, cond_gram) = calibration_sigma_with_bound(&pm, bound)?;
    let k = cross_coefficients(&pm, &sigma)?;
    let mut max_offdiag_k = 0.0f64;
    for j in 0..k.ncols() {
        for i in 0..k.nrows() {
            if i != j {
                max_offdiag_k = max_offdiag_k.max(k[(i, j)].abs().as_f64());
            }
        }
    }

    let before = oracle.call_count();
    let y_u = oracle.measure_basis_batch(&basis)?;
    let oracle_calls = oracle.call_count() - before;

    let terms = (0..basis.len())
        .into_par_iter()
        .map(|j| {
            let y0 = MeasurementVector(pm.row(j));
            let pre = PreMeasure::with_index(&y0, &sigma, a, Some(j))?;
            Ok(pre.term(y_u.column(j).into_owned()))
        })
        .collect::<Result<Vec<_>>>()?;
    let recv = FactoredRecvMatrix::from_terms(a.rows(), a.cols(), terms);

    let report = CalibrationReport {
        orthonormality_residual: basis.orthonormality_residual(),
        basis,
        cond_gram,
        max_offdiag_k,
        oracle_calls,
    };
    Ok((recv, report))
}
