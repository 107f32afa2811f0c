//! Matched solutions: a constructed matrix that reproduces one particular
//! target measurement `y`.
//!
//! [`error_iteration`] measures the target once per iteration.
//! [`matched_solution`] measures it once in total and replaces later
//! measurements with `k · A_recv · PM`, where `k` comes from a single
//! response of the pre-measure matrix ([`estimate_k`]).

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::mismatch::{default_sigma, PreMeasure};
use crate::operator::{FactoredRecvMatrix, LinearOperator};
use crate::real::{Precision, Real};
use crate::sim::OracleSession;
use crate::types::{validate_dims, Image, MeasurementMatrix, MeasurementVector};

pub const DEFAULT_EPOCHS: usize = 20;
pub const DEFAULT_DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, Clone)]
pub struct MatchedSolveConfig<T: Real> {
    pub epochs: usize,
    pub pm_image: Image<T>,
    /// Early exit once `‖e_y‖∞ <= stop_tol · ‖y‖∞`.
    pub stop_tol: f64,
    /// Abort when `‖e_y‖₂` exceeds this multiple of the smallest error seen.
    pub divergence_factor: f64,
}

impl<T: Real> MatchedSolveConfig<T> {
    pub fn new(pm_image: Image<T>) -> Self {
        MatchedSolveConfig {
            epochs: DEFAULT_EPOCHS,
            pm_image,
            stop_tol: T::PRECISION.stop_tol(),
            divergence_factor: DEFAULT_DIVERGENCE_FACTOR,
        }
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_stop_tol(mut self, stop_tol: f64) -> Self {
        self.stop_tol = stop_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidInput("epochs must be positive".into()));
        }
        if !self.pm_image.is_nonzero() {
            return Err(Error::InvalidInput("pre-measure image must be non-zero".into()));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidInput("stop_tol must be >= 0".into()));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::InvalidInput("divergence_factor must be > 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub error_2: f64,
    pub error_inf: f64,
    /// Oracle calls made by this solve so far.
    pub oracle_calls: u64,
}

/// Residual after every update of an error-iteration solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTrace {
    pub records: Vec<TraceRecord>,
    /// `‖e_y‖₂` before the first update.
    pub initial_error_2: f64,
    pub initial_error_inf: f64,
    /// Observed `|k_ε|`: the first-step contraction for error iteration,
    /// `|1 - k|` for the one-measurement variant.
    pub convergence_factor: f64,
    /// The multiplier estimate `k` (one-measurement variant only).
    pub multiplier_estimate: Option<f64>,
    pub stopped_early: bool,
    pub precision: Precision,
}

impl ErrorTrace {
    fn new(initial: &DVector<impl Real>, precision: Precision) -> Self {
        ErrorTrace {
            records: Vec::new(),
            initial_error_2: initial.norm().as_f64(),
            initial_error_inf: initial.amax().as_f64(),
            convergence_factor: f64::NAN,
            multiplier_estimate: None,
            stopped_early: false,
            precision,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_error_2(&self) -> f64 {
        self.records.last().map_or(self.initial_error_2, |r| r.error_2)
    }

    pub fn final_error_inf(&self) -> f64 {
        self.records.last().map_or(self.initial_error_inf, |r| r.error_inf)
    }

    /// `‖e_yᵏ‖₂ / ‖e_y⁰‖₂` per iteration.
    pub fn normalized(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| r.error_2 / self.initial_error_2)
            .collect()
    }
}

struct Tracker {
    y_inf: f64,
    stop_tol: f64,
    factor: f64,
    min_err: f64,
}

enum Step {
    Continue,
    Stop,
}

impl Tracker {
    fn record<T: Real>(
        &mut self,
        trace: &mut ErrorTrace,
        iteration: usize,
        e: &DVector<T>,
        calls: u64,
    ) -> Result<Step> {
        let error_2 = e.norm().as_f64();
        let error_inf = e.amax().as_f64();
        trace.records.push(TraceRecord {
            iteration,
            error_2,
            error_inf,
            oracle_calls: calls,
        });
        if !error_2.is_finite() || error_2 > self.factor * self.min_err {
            return Err(Error::Divergence {
                iteration,
                error: error_2,
                min: self.min_err,
                factor: self.factor,
            });
        }
        self.min_err = self.min_err.min(error_2);
        if error_inf <= self.stop_tol * self.y_inf {
            trace.stopped_early = true;
            return Ok(Step::Stop);
        }
        Ok(Step::Continue)
    }
}

fn prepare<T: Real>(
    a: &MeasurementMatrix<T>,
    cfg: &MatchedSolveConfig<T>,
) -> Result<PreMeasure<T>> {
    cfg.validate()?;
    validate_dims(a, &cfg.pm_image)?;
    let sigma = default_sigma(a)?;
    let y0 = a.measure(&cfg.pm_image);
    PreMeasure::new(&y0, &sigma, a)
}

fn check_target<T: Real>(y: &MeasurementVector<T>, a: &MeasurementMatrix<T>) -> Result<()> {
    if y.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            context: "target measurement vs matrix rows",
            left: (y.len(), 1),
            right: a.shape(),
        });
    }
    Ok(())
}

/// Error iteration with one oracle measurement per iteration.
pub fn error_iteration<T: Real>(
    session: &mut OracleSession<'_, T>,
    y: &MeasurementVector<T>,
    a: &MeasurementMatrix<T>,
    cfg: &MatchedSolveConfig<T>,
) -> Result<(FactoredRecvMatrix<T>, ErrorTrace)> {
    check_target(y, a)?;
    let pre = prepare(a, cfg)?;
    let start = session.call_count();
    let mut recv = FactoredRecvMatrix::zeros(a.rows(), a.cols());
    let mut e = y.values().clone();
    let mut trace = ErrorTrace::new(&e, T::PRECISION);
    let mut tracker = Tracker {
        y_inf: y.norm_inf(),
        stop_tol: cfg.stop_tol,
        factor: cfg.divergence_factor,
        min_err: trace.initial_error_2,
    };
    for it in 1..=cfg.epochs {
        recv.push(pre.term(e));
        let current = session.measure_through(&recv)?;
        e = y.values() - current.values();
        let calls = session.call_count() - start;
        if let Step::Stop = tracker.record(&mut trace, it, &e, calls)? {
            break;
        }
    }
    trace.convergence_factor = trace.records[0].error_2 / trace.initial_error_2;
    Ok((recv, trace))
}

/// Result of pre-measure initialization.
#[derive(Debug, Clone)]
pub struct PmInit<T: Real> {
    pub y0: MeasurementVector<T>,
    pub recv: FactoredRecvMatrix<T>,
    /// `‖y0 - A_recv·PM‖∞` after each epoch.
    pub residuals: Vec<f64>,
}

fn initialize_with<T: Real>(pre: &PreMeasure<T>, pm: &Image<T>, epochs: usize, n: usize) -> PmInit<T> {
    let y0 = pre.y0().values();
    let mut recv = FactoredRecvMatrix::zeros(y0.len(), n);
    let mut residuals = Vec::with_capacity(epochs);
    let mut e = y0.clone();
    for _ in 0..epochs {
        recv.push(pre.term(e));
        e = y0 - recv.apply(pm.pixels());
        let r = e.amax().as_f64();
        residuals.push(r);
        if r == 0.0 {
            break;
        }
    }
    PmInit {
        y0: pre.y0().clone(),
        recv,
        residuals,
    }
}

/// Builds `A_recv` for the pre-measure itself by error iteration against the
/// computable `y0 = A·PM`. Makes no oracle calls.
pub fn initialize_recv_y0<T: Real>(
    a: &MeasurementMatrix<T>,
    cfg: &MatchedSolveConfig<T>,
) -> Result<PmInit<T>> {
    let pre = prepare(a, cfg)?;
    Ok(initialize_with(&pre, &cfg.pm_image, cfg.epochs, a.cols()))
}

/// One-measurement matched solution.
pub fn matched_solution<T: Real>(
    session: &mut OracleSession<'_, T>,
    y: &MeasurementVector<T>,
    a: &MeasurementMatrix<T>,
    cfg: &MatchedSolveConfig<T>,
) -> Result<(FactoredRecvMatrix<T>, ErrorTrace)> {
    check_target(y, a)?;
    let pre = prepare(a, cfg)?;
    let pm = cfg.pm_image.pixels();
    let PmInit { mut recv, .. } = initialize_with(&pre, &cfg.pm_image, cfg.epochs, a.cols());

    let start = session.call_count();
    let y_prime = session.measure_through(&recv)?;
    let calls = session.call_count() - start;
    let y_pm = MeasurementVector(recv.apply(pm));
    let k = estimate_k(&y_prime, &y_pm)?;

    let mut e = y.values() - y_prime.values();
    let mut trace = ErrorTrace::new(&e, T::PRECISION);
    trace.multiplier_estimate = Some(k.as_f64());
    trace.convergence_factor = (T::one() - k).abs().as_f64();
    let mut tracker = Tracker {
        y_inf: y.norm_inf(),
        stop_tol: cfg.stop_tol,
        factor: cfg.divergence_factor,
        min_err: trace.initial_error_2,
    };
    for it in 1..=cfg.epochs {
        recv.push(pre.term(e));
        e = y.values() - recv.apply(pm) * k;
        if let Step::Stop = tracker.record(&mut trace, it, &e, calls)? {
            break;
        }
    }
    Ok((recv, trace))
}

/// Scalar `k` with `y' ≈ k · y_pm`: the median of the componentwise ratios.
///
/// Fails if any `|y_pm[i]| <= zero_tol · ‖y_pm‖∞`.
pub fn estimate_k<T: Real>(y_prime: &MeasurementVector<T>, y_pm: &MeasurementVector<T>) -> Result<T> {
    if y_prime.len() != y_pm.len() || y_pm.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "y' vs y_pm",
            left: (y_prime.len(), 1),
            right: (y_pm.len(), 1),
        });
    }
    let scale = y_pm.values().amax();
    let tol = T::of_f64(T::PRECISION.zero_tol()) * scale;
    let small: Vec<usize> = y_pm
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| !(v.abs() > tol) || scale == T::zero())
        .map(|(i, _)| i)
        .collect();
    if !small.is_empty() {
        return Err(Error::NearZeroComponents { indices: small });
    }
    let mut ratios: Vec<T> = y_prime
        .values()
        .iter()
        .zip(y_pm.values().iter())
        .map(|(a, b)| *a / *b)
        .collect();
    ratios.sort_by(|a, b| a.partial_cmp(b).expect("finite ratios"));
    let n = ratios.len();
    Ok(if n % 2 == 1 {
        ratios[n / 2]
    } else {
        (ratios[n / 2 - 1] + ratios[n / 2]) * T::of_f64(0.5)
    })
}
