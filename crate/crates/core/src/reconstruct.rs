//! ℓ1-regularized least squares `½‖y - A·x‖² + λ‖x‖₁`, solved by monotone
//! FISTA with backtracking. Works through [`LinearOperator`], so a factored
//! constructed matrix is never materialized.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::operator::LinearOperator;
use crate::real::Real;
use crate::types::{Image, MeasurementVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// `1/L` with `L` from power iteration on `AᵀA`.
    Fixed,
    /// Start from a power-iteration estimate and double `L` until the
    /// quadratic upper bound holds.
    Backtracking,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructConfig {
    /// ℓ1 weight. `None` resolves to `1e-3 · ‖Aᵀy‖∞`.
    pub lambda_reg: Option<f64>,
    pub max_iters: usize,
    pub step_rule: StepRule,
    /// Stop once the proximal-gradient step moves less than
    /// `conv_tol · ‖x‖₂`.
    pub conv_tol: f64,
    /// Project onto `x >= 0`.
    pub nonneg: bool,
    /// Refit the detected support by least squares after the ℓ1 phase,
    /// removing the shrinkage bias.
    pub debias: bool,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig {
            lambda_reg: None,
            max_iters: 5000,
            step_rule: StepRule::Backtracking,
            conv_tol: 1e-9,
            nonneg: true,
            debias: true,
        }
    }
}

impl ReconstructConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda_reg {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::InvalidInput(format!("lambda_reg must be > 0, got {l}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be positive".into()));
        }
        if !(self.conv_tol > 0.0) {
            return Err(Error::InvalidInput("conv_tol must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructReport {
    pub lambda_reg: f64,
    pub iterations: usize,
    /// Objective at the starting point followed by one value per iteration.
    pub objective: Vec<f64>,
    pub converged: bool,
    /// Final Lipschitz estimate.
    pub lipschitz: f64,
    /// Number of refitted coefficients, if the debiasing refit was applied.
    pub debiased_support: Option<usize>,
}

/// Entries below this fraction of the largest magnitude are not refitted.
pub const DEBIAS_THRESHOLD: f64 = 1e-3;

/// `sign(v)·max(|v| - t, 0)` per component.
pub fn soft_threshold<T: Real>(v: &DVector<T>, t: T) -> DVector<T> {
    v.map(|c| {
        let m = c.abs() - t;
        if m > T::zero() {
            if c < T::zero() {
                -m
            } else {
                m
            }
        } else {
            T::zero()
        }
    })
}

fn prox<T: Real>(v: &DVector<T>, t: T, nonneg: bool) -> DVector<T> {
    if nonneg {
        v.map(|c| (c - t).max(T::zero()))
    } else {
        soft_threshold(v, t)
    }
}

fn l1<T: Real>(x: &DVector<T>) -> T {
    x.iter().fold(T::zero(), |s, v| s + v.abs())
}

/// Largest eigenvalue of `AᵀA` by power iteration from a fixed start.
pub fn power_estimate<T: Real, Op: LinearOperator<T> + ?Sized>(op: &Op, iters: usize) -> T {
    let n = op.cols();
    let mut v = DVector::from_fn(n, |i, _| T::one() + T::of_f64(i as f64 / n as f64));
    v /= v.norm();
    let mut est = T::zero();
    for _ in 0..iters {
        let w = op.apply_adjoint(&op.apply(&v));
        est = w.norm();
        if est == T::zero() {
            break;
        }
        v = w / est;
    }
    est
}

/// Approximately minimizes the ℓ1-regularized objective starting from zero.
pub fn reconstruct<T: Real, Op: LinearOperator<T> + ?Sized>(
    y: &MeasurementVector<T>,
    op: &Op,
    cfg: &ReconstructConfig,
) -> Result<(Image<T>, ReconstructReport)> {
    reconstruct_from(y, op, cfg, &DVector::zeros(op.cols()))
}

/// As [`reconstruct`], warm-started at `x0`.
pub fn reconstruct_from<T: Real, Op: LinearOperator<T> + ?Sized>(
    y: &MeasurementVector<T>,
    op: &Op,
    cfg: &ReconstructConfig,
    x0: &DVector<T>,
) -> Result<(Image<T>, ReconstructReport)> {
    cfg.validate()?;
    if y.len() != op.rows() || x0.len() != op.cols() {
        return Err(Error::DimensionMismatch {
            context: "measurement / start point vs operator",
            left: (y.len(), x0.len()),
            right: (op.rows(), op.cols()),
        });
    }
    let y = y.values();
    let lambda_f64 = cfg
        .lambda_reg
        .unwrap_or_else(|| 1e-3 * op.apply_adjoint(y).amax().as_f64());
    let lambda = T::of_f64(lambda_f64);
    let half = T::of_f64(0.5);

    let smooth = |v: &DVector<T>| (op.apply(v) - y).norm_squared() * half;

    let power = power_estimate(op, 30);
    let mut lip = match cfg.step_rule {
        StepRule::Fixed => power * T::of_f64(1.05),
        StepRule::Backtracking => power,
    };
    if lip <= T::zero() {
        lip = T::one();
    }

    let mut x = x0.clone();
    if cfg.nonneg {
        x.apply(|v| *v = v.max(T::zero()));
    }
    let mut f_x = smooth(&x) + lambda * l1(&x);
    let mut z = x.clone();
    let mut t = T::one();
    let mut objective = vec![f_x.as_f64()];
    let mut converged = false;
    let mut iterations = 0;
    let two = T::of_f64(2.0);
    let four = T::of_f64(4.0);

    for _ in 0..cfg.max_iters {
        iterations += 1;
        let r = op.apply(&z) - y;
        let g = op.apply_adjoint(&r);
        let f_z = r.norm_squared() * half;
        let (u, f_u) = loop {
            let u = prox(&(&z - &g / lip), lambda / lip, cfg.nonneg);
            let f_u = smooth(&u);
            if cfg.step_rule == StepRule::Fixed {
                break (u, f_u);
            }
            let d = &u - &z;
            let bound = f_z + g.dot(&d) + d.norm_squared() * lip * half;
            if f_u <= bound || !f_u.is_finite() {
                break (u, f_u);
            }
            lip *= two;
        };
        let obj_u = f_u + lambda * l1(&u);
        let t_next = (T::one() + (T::one() + four * t * t).sqrt()) / two;
        let step = (&u - &z).norm();
        let (x_next, f_next) = if obj_u <= f_x { (u.clone(), obj_u) } else { (x.clone(), f_x) };
        z = &x_next + (&u - &x_next) * (t / t_next) + (&x_next - &x) * ((t - T::one()) / t_next);
        x = x_next;
        f_x = f_next;
        t = t_next;
        objective.push(f_x.as_f64());
        let scale = u.norm().max(T::of_f64(1e-30));
        if step <= T::of_f64(cfg.conv_tol) * scale {
            converged = true;
            break;
        }
    }

    let mut debiased_support = None;
    if cfg.debias {
        if let Some((refit, size)) = debias(op, y, &x, cfg.nonneg) {
            x = refit;
            debiased_support = Some(size);
        }
    }

    let report = ReconstructReport {
        lambda_reg: lambda_f64,
        iterations,
        objective,
        converged,
        lipschitz: lip.as_f64(),
        debiased_support,
    };
    Ok((Image::from_vector(x)?, report))
}

/// Least squares restricted to the significant entries of `x`. Under the
/// non-negativity constraint, entries fitted negative are dropped and the
/// rest refitted. Declines when the support is empty or not smaller than
/// the number of measurements.
fn debias<T: Real, Op: LinearOperator<T> + ?Sized>(
    op: &Op,
    y: &DVector<T>,
    x: &DVector<T>,
    nonneg: bool,
) -> Option<(DVector<T>, usize)> {
    let peak = x.amax();
    if peak == T::zero() {
        return None;
    }
    let cut = peak * T::of_f64(DEBIAS_THRESHOLD);
    let mut support: Vec<usize> = (0..x.len()).filter(|&i| x[i].abs() > cut).collect();
    if support.len() >= op.rows() {
        return None;
    }
    let mut unit = DVector::zeros(op.cols());
    let columns: Vec<DVector<T>> = support
        .iter()
        .map(|&i| {
            unit[i] = T::one();
            let c = op.apply(&unit);
            unit[i] = T::zero();
            c
        })
        .collect();
    let mut keep: Vec<usize> = (0..support.len()).collect();
    loop {
        if keep.is_empty() {
            return None;
        }
        let cols = DMatrix::from_columns(&keep.iter().map(|&c| columns[c].clone()).collect::<Vec<_>>());
        let coef = cols.svd(true, true).solve(y, T::default_epsilon()).ok()?;
        if coef.iter().any(|v| !v.is_finite()) {
            return None;
        }
        if nonneg && coef.iter().any(|v| *v < T::zero()) {
            keep = keep
                .iter()
                .zip(coef.iter())
                .filter(|(_, v)| **v >= T::zero())
                .map(|(c, _)| *c)
                .collect();
            continue;
        }
        support = keep.iter().map(|&c| support[c]).collect();
        let mut out = DVector::zeros(x.len());
        for (c, &i) in support.iter().enumerate() {
            out[i] = coef[c];
        }
        return Some((out, support.len()));
    }
}
