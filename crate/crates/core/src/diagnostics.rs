//! Measurement-free analysis of constructed matrices and of the error
//! recurrence.

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::operator::LinearOperator;
use crate::real::Real;
use crate::sim::{derive_rng, trial_seed, STREAM_NOISE};
use crate::types::{Image, MeasurementVector};

/// Default coefficient-of-variation threshold between constant-like and
/// fluctuating λ vectors.
pub const DEFAULT_CV_THRESHOLD: f64 = 1e-3;

/// Components of `A_recv·x` smaller than this fraction of its ∞-norm are
/// left out of the λ vector.
pub const LAMBDA_EXCLUSION: f64 = 1e-12;

/// Relative magnitude above which a pixel counts as part of the support.
pub const SUPPORT_THRESHOLD: f64 = 1e-2;

fn check_op<T: Real, Op: LinearOperator<T> + ?Sized>(op: &Op, x: &Image<T>) -> Result<()> {
    if op.cols() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "operator columns vs image pixels",
            left: (op.rows(), op.cols()),
            right: (x.height(), x.width()),
        });
    }
    Ok(())
}

/// Mean over `trials` of `‖y + ε - A_recv·x‖₂` with `ε ~ N(0, oracle_noise²)`.
/// With zero noise this is the single deterministic residual norm.
pub fn match_error<T: Real, Op: LinearOperator<T> + ?Sized>(
    y: &MeasurementVector<T>,
    op: &Op,
    x: &Image<T>,
    trials: usize,
    oracle_noise: f64,
    seed: u64,
) -> Result<f64> {
    check_op(op, x)?;
    if y.len() != op.rows() {
        return Err(Error::DimensionMismatch {
            context: "measurement vs operator rows",
            left: (y.len(), 1),
            right: (op.rows(), op.cols()),
        });
    }
    if trials == 0 {
        return Err(Error::InvalidInput("match_error needs at least one trial".into()));
    }
    let resid = y.values() - op.apply(x.pixels());
    if oracle_noise == 0.0 {
        return Ok(resid.norm().as_f64());
    }
    let mut rng = derive_rng(seed, STREAM_NOISE);
    let mut total = 0.0;
    for _ in 0..trials {
        let noisy = resid.map(|r| {
            let z: f64 = StandardNormal.sample(&mut rng);
            r.as_f64() + oracle_noise * z
        });
        total += noisy.norm();
    }
    Ok(total / trials as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaVerdict {
    ConstantLike,
    Fluctuating,
}

impl LambdaVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            LambdaVerdict::ConstantLike => "constant-like",
            LambdaVerdict::Fluctuating => "fluctuating",
        }
    }
}

/// `λ = (A_recv·x') ⊘ (A_recv·x)` and its spread.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaReport {
    /// One entry per measurement; `NaN` where the denominator was excluded.
    pub lambda: Vec<f64>,
    pub excluded: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub coefficient_of_variation: f64,
    pub verdict: LambdaVerdict,
}

pub fn lambda_vector<T: Real, Op: LinearOperator<T> + ?Sized>(
    op: &Op,
    x: &Image<T>,
    x_prime: &Image<T>,
) -> Result<LambdaReport> {
    lambda_vector_with_threshold(op, x, x_prime, DEFAULT_CV_THRESHOLD)
}

pub fn lambda_vector_with_threshold<T: Real, Op: LinearOperator<T> + ?Sized>(
    op: &Op,
    x: &Image<T>,
    x_prime: &Image<T>,
    cv_threshold: f64,
) -> Result<LambdaReport> {
    check_op(op, x)?;
    check_op(op, x_prime)?;
    let den = op.apply(x.pixels());
    let num = op.apply(x_prime.pixels());
    let scale = den.amax().as_f64();
    if !(scale > 0.0) {
        return Err(Error::AllComponentsExcluded);
    }
    let cut = LAMBDA_EXCLUSION * scale;
    let lambda: Vec<f64> = den
        .iter()
        .zip(num.iter())
        .map(|(d, n)| {
            let d = d.as_f64();
            if d.abs() < cut {
                f64::NAN
            } else {
                n.as_f64() / d
            }
        })
        .collect();
    let kept: Vec<f64> = lambda.iter().copied().filter(|v| !v.is_nan()).collect();
    if kept.is_empty() {
        return Err(Error::AllComponentsExcluded);
    }
    let n = kept.len() as f64;
    let mean = kept.iter().sum::<f64>() / n;
    let var = kept.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let cv = if mean == 0.0 {
        f64::INFINITY
    } else {
        var.sqrt() / mean.abs()
    };
    Ok(LambdaReport {
        excluded: lambda.len() - kept.len(),
        min: kept.iter().cloned().fold(f64::INFINITY, f64::min),
        max: kept.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        mean,
        coefficient_of_variation: cv,
        verdict: if cv <= cv_threshold {
            LambdaVerdict::ConstantLike
        } else {
            LambdaVerdict::Fluctuating
        },
        lambda,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub i: u32,
    pub x: f64,
    pub value: f64,
}

/// Rows `(i, x, (1 - x)·xⁱ)` for every pair, `i` outermost.
pub fn curve_family(i_values: &[u32], x_grid: &[f64]) -> Result<Vec<CurveRow>> {
    if let Some(bad) = x_grid.iter().find(|x| !(x.abs() < 1.0)) {
        return Err(Error::Domain(format!("curve family needs |x| < 1, got {bad}")));
    }
    Ok(i_values
        .iter()
        .flat_map(|&i| {
            x_grid.iter().map(move |&x| CurveRow {
                i,
                x,
                value: (1.0 - x) * x.powi(i as i32),
            })
        })
        .collect())
}

/// `count` evenly spaced points strictly inside (-1, 1).
pub fn open_unit_grid(count: usize) -> Vec<f64> {
    (1..=count)
        .map(|j| -1.0 + 2.0 * j as f64 / (count + 1) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseLimitConfig {
    pub k_eps: f64,
    pub sigma: f64,
    pub mu: f64,
    pub trials: usize,
    pub burn_in: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseLimitStats {
    pub k_eps: f64,
    pub sigma: f64,
    pub mu: f64,
    pub trials: usize,
    pub empirical_mean: f64,
    pub empirical_variance: f64,
    pub mean_standard_error: f64,
    pub variance_standard_error: f64,
    /// `σ²/(1 + k_ε)`.
    pub stated_variance: f64,
    /// `(1 - k_ε)σ²/(1 + k_ε)`, the stationary variance of the recurrence.
    pub ar1_variance: f64,
    /// Empirical variance is more than three standard errors away from
    /// `σ²/(1 + k_ε)`.
    pub stated_variance_rejected: bool,
}

/// Simulates `λᵏ⁺¹ = k_ε·λᵏ + (1 - k_ε)·εᵏ`, `εᵏ ~ N(μ, σ²)`, from `λ⁰ = 1`
/// for `burn_in` steps in each of `trials` independent chains, and
/// summarizes the final values.
pub fn noise_limit_stats(cfg: &NoiseLimitConfig) -> Result<NoiseLimitStats> {
    let k = cfg.k_eps;
    if !(k.abs() < 1.0) {
        return Err(Error::Domain(format!(
            "recurrence diverges for |k_eps| >= 1 (got {k})"
        )));
    }
    if cfg.trials < 100 {
        return Err(Error::InvalidInput(format!(
            "noise-limit statistics need >= 100 trials, got {}",
            cfg.trials
        )));
    }
    if !(cfg.sigma >= 0.0) {
        return Err(Error::InvalidInput("sigma must be >= 0".into()));
    }
    let finals: Vec<f64> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = derive_rng(trial_seed(cfg.seed, t), STREAM_NOISE);
            let mut lambda = 1.0;
            for _ in 0..cfg.burn_in {
                let z: f64 = StandardNormal.sample(&mut rng);
                let eps = cfg.mu + cfg.sigma * z;
                lambda = k * lambda + (1.0 - k) * eps;
            }
            lambda
        })
        .collect();
    let n = finals.len() as f64;
    let mean = finals.iter().sum::<f64>() / n;
    let var = finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let var_se = var * (2.0 / (n - 1.0)).sqrt();
    let stated_variance = cfg.sigma.powi(2) / (1.0 + k);
    Ok(NoiseLimitStats {
        k_eps: k,
        sigma: cfg.sigma,
        mu: cfg.mu,
        trials: cfg.trials,
        empirical_mean: mean,
        empirical_variance: var,
        mean_standard_error: (var / n).sqrt(),
        variance_standard_error: var_se,
        stated_variance,
        ar1_variance: (1.0 - k) * cfg.sigma.powi(2) / (1.0 + k),
        stated_variance_rejected: (var - stated_variance).abs() > 3.0 * var_se,
    })
}

/// Indices with `|x_i| > SUPPORT_THRESHOLD · ‖x‖∞`.
pub fn support<T: Real>(x: &DVector<T>) -> Vec<usize> {
    let peak = x.amax().as_f64();
    if peak == 0.0 {
        return Vec::new();
    }
    x.iter()
        .enumerate()
        .filter(|(_, v)| v.abs().as_f64() > SUPPORT_THRESHOLD * peak)
        .map(|(i, _)| i)
        .collect()
}

/// F1 score of an estimated support against the true one.
pub fn support_f1(estimated: &[usize], truth: &[usize]) -> f64 {
    if estimated.is_empty() && truth.is_empty() {
        return 1.0;
    }
    let tp = estimated.iter().filter(|i| truth.contains(i)).count();
    2.0 * tp as f64 / (estimated.len() + truth.len()) as f64
}

/// PSNR in dB with the ground truth's peak magnitude as reference.
pub fn psnr<T: Real>(estimate: &DVector<T>, truth: &DVector<T>) -> f64 {
    let peak = truth.amax().as_f64();
    let mse = (estimate - truth).norm_squared().as_f64() / truth.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

pub fn relative_error<T: Real>(estimate: &DVector<T>, truth: &DVector<T>) -> f64 {
    (estimate - truth).norm().as_f64() / truth.norm().as_f64()
}

/// Relative error at or below which an exact-support reconstruction counts
/// as a success.
pub const SUCCESS_RELATIVE_ERROR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quality {
    pub psnr: f64,
    pub support_f1: f64,
    pub relative_error: f64,
    pub support_exact: bool,
}

impl Quality {
    pub fn evaluate<T: Real>(estimate: &DVector<T>, truth: &DVector<T>) -> Self {
        let est = support(estimate);
        let tru = support(truth);
        Quality {
            psnr: psnr(estimate, truth),
            support_f1: support_f1(&est, &tru),
            relative_error: relative_error(estimate, truth),
            support_exact: est == tru,
        }
    }

    /// Exact support and relative error within [`SUCCESS_RELATIVE_ERROR`].
    pub fn success(&self) -> bool {
        self.support_exact && self.relative_error <= SUCCESS_RELATIVE_ERROR
    }

    /// Support F1 below one half.
    pub fn failed(&self) -> bool {
        self.support_f1 < 0.5
    }
}
