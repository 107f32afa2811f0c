//! Single trials of each solver, shared by the subcommands. A trial is a
//! pure function of (config, seed, noise level).

use std::path::Path;

use mismatch_core::calibration::{calibrate, CalibrationConfig, CalibrationReport};
use mismatch_core::diagnostics::{match_error, Quality};
use mismatch_core::matched::{error_iteration, matched_solution, ErrorTrace, MatchedSolveConfig};
use mismatch_core::reconstruct::{reconstruct, ReconstructReport};
use mismatch_core::sim::{
    derive_rng, generate_system, smooth_image, sparse_image, trial_seed, MeasurementOracle, SystemSpec,
    STREAM_PROBES, STREAM_TARGETS,
};
use mismatch_core::{FactoredRecvMatrix, Image, LinearOperator, MeasurementMatrix, MeasurementVector, Real};
use nalgebra::DVector;
use rand::Rng;

use crate::config::{Config, SolverKind};
use crate::error::{CliError, CliResult};
use crate::formats::{read_mmrx, read_pgm};

/// Seed of trial `t`. Trial 0 runs on the base seed itself, so the first
/// trial of a sweep coincides with a single run.
pub fn seed_for_trial(seed: u64, t: u64) -> u64 {
    if t == 0 {
        seed
    } else {
        trial_seed(seed, t)
    }
}

pub fn load_system<T: Real>(
    cfg: &Config,
    seed: u64,
    sigma: f64,
) -> CliResult<(MeasurementMatrix<T>, MeasurementOracle<T>)> {
    let s = &cfg.system;
    match (&s.a_file, &s.a_u_file) {
        (Some(a), Some(u)) => {
            let a = MeasurementMatrix::new(read_mmrx::<T>(Path::new(a))?)?;
            let u = MeasurementMatrix::new(read_mmrx::<T>(Path::new(u))?)?;
            if a.shape() != (s.m, s.n) || u.shape() != (s.m, s.n) {
                return Err(CliError::Config(format!(
                    "matrix files are {:?} and {:?}, config says {}x{}",
                    a.shape(),
                    u.shape(),
                    s.m,
                    s.n
                )));
            }
            Ok((a, MeasurementOracle::new(u, sigma, seed)?))
        }
        _ => Ok(generate_system(&SystemSpec::new(s.m, s.n, seed, sigma))?),
    }
}

/// The configured target images; the first one is the matched-solve target.
pub fn targets<T: Real>(cfg: &Config, seed: u64, at_least: usize) -> CliResult<Vec<Image<T>>> {
    let (w, h) = (cfg.width(), cfg.height());
    let t = &cfg.target;
    if t.kind == "files" {
        let imgs = t
            .files
            .iter()
            .map(|f| {
                let img = read_pgm::<T>(Path::new(f))?;
                if img.len() != cfg.system.n {
                    return Err(CliError::Config(format!(
                        "target {f} has {} pixels, expected {}",
                        img.len(),
                        cfg.system.n
                    )));
                }
                Ok(img.reshape(w, h)?)
            })
            .collect::<CliResult<Vec<_>>>()?;
        if imgs.len() < at_least {
            return Err(CliError::Config(format!("need at least {at_least} target files")));
        }
        return Ok(imgs);
    }
    let mut rng = derive_rng(seed, STREAM_TARGETS);
    (0..t.count.max(at_least))
        .map(|_| {
            Ok(match t.kind.as_str() {
                "smooth" => smooth_image(w, h, &mut rng)?,
                _ => sparse_image(w, h, t.sparsity, &mut rng)?,
            })
        })
        .collect()
}

pub fn pm_image<T: Real>(cfg: &Config, seed: u64, target: &Image<T>) -> CliResult<Image<T>> {
    let s = &cfg.solver;
    let (w, h) = (target.width(), target.height());
    let n = w * h;
    let img = match s.pm_image.as_str() {
        "flat_gray" => Image::new(w, h, DVector::from_element(n, T::of_f64(s.pm_level)))?,
        "random" => {
            let mut rng = derive_rng(seed, STREAM_PROBES);
            let px = DVector::from_fn(n, |_, _| T::of_f64(rng.gen_range(0.0..2.0 * s.pm_level)));
            Image::new(w, h, px)?
        }
        "sparse" => sparse_image(w, h, cfg.target.sparsity, &mut derive_rng(seed, STREAM_PROBES))?,
        "target" => target.scaled(T::of_f64(s.pm_scale)),
        path => {
            let img = read_pgm::<T>(Path::new(path))?;
            if img.len() != n {
                return Err(CliError::Config(format!("pm image {path} has {} pixels, expected {n}", img.len())));
            }
            img.reshape(w, h)?
        }
    };
    Ok(img)
}

pub fn matched_config<T: Real>(cfg: &Config, pm: Image<T>) -> MatchedSolveConfig<T> {
    let mut c = MatchedSolveConfig::new(pm).with_epochs(cfg.solver.epochs);
    if let Some(tol) = cfg.solver.stop_tol {
        c = c.with_stop_tol(tol);
    }
    c.divergence_factor = cfg.solver.divergence_factor;
    c
}

#[derive(Debug, Clone)]
pub struct Reconstruction<T: Real> {
    pub image: Image<T>,
    pub quality: Quality,
    pub report: ReconstructReport,
}

fn run_reconstruct<T: Real, Op: LinearOperator<T> + ?Sized>(
    cfg: &Config,
    y: &MeasurementVector<T>,
    op: &Op,
    truth: &Image<T>,
) -> CliResult<Option<Reconstruction<T>>> {
    if !cfg.reconstruct.enabled {
        return Ok(None);
    }
    let (image, report) = reconstruct(y, op, &cfg.reconstruct_config()?)?;
    let image = image.reshape(truth.width(), truth.height())?;
    let quality = Quality::evaluate(image.pixels(), truth.pixels());
    Ok(Some(Reconstruction { image, quality, report }))
}

#[derive(Debug, Clone)]
pub struct MatchedOutcome<T: Real> {
    pub target: Image<T>,
    pub y: MeasurementVector<T>,
    pub recv: FactoredRecvMatrix<T>,
    pub trace: ErrorTrace,
    /// `‖y - A_recv·x‖₂` against the measured (possibly noisy) `y`.
    pub final_error: f64,
    /// Same residual for the pre-measurement matrix itself.
    pub baseline_error: f64,
    /// Oracle calls made by the solver, excluding the target measurement.
    pub solver_calls: u64,
    pub recon: Option<Reconstruction<T>>,
    pub baseline: Option<Reconstruction<T>>,
}

/// One run of error iteration (`algo1`) or the one-measurement solution
/// (`algo2`) on the first target.
pub fn matched_trial<T: Real>(
    cfg: &Config,
    kind: SolverKind,
    seed: u64,
    sigma: f64,
) -> CliResult<MatchedOutcome<T>> {
    let (a, mut oracle) = load_system::<T>(cfg, seed, sigma)?;
    let x = targets::<T>(cfg, seed, 1)?.swap_remove(0);
    let solve_cfg = matched_config(cfg, pm_image(cfg, seed, &x)?);
    let mut session = oracle.session(x.clone())?;
    let y = session.measure_target();
    let before = session.call_count();
    let (recv, trace) = match kind {
        SolverKind::Algo1 => error_iteration(&mut session, &y, &a, &solve_cfg)?,
        SolverKind::Algo2 => matched_solution(&mut session, &y, &a, &solve_cfg)?,
        SolverKind::Algo3 => {
            return Err(CliError::Config("algo3 is a calibration; use the calibrate command".into()))
        }
    };
    let solver_calls = session.call_count() - before;
    let final_error = match_error(&y, &recv, &x, 1, 0.0, 0)?;
    let baseline_error = match_error(&y, &a, &x, 1, 0.0, 0)?;
    let recon = run_reconstruct(cfg, &y, &recv, &x)?;
    let baseline = run_reconstruct(cfg, &y, &a, &x)?;
    Ok(MatchedOutcome {
        target: x,
        y,
        recv,
        trace,
        final_error,
        baseline_error,
        solver_calls,
        recon,
        baseline,
    })
}

#[derive(Debug, Clone)]
pub struct TargetResult<T: Real> {
    pub target: Image<T>,
    pub final_error: f64,
    pub recon: Option<Reconstruction<T>>,
    pub baseline: Option<Reconstruction<T>>,
}

#[derive(Debug, Clone)]
pub struct CalibOutcome<T: Real> {
    pub recv: FactoredRecvMatrix<T>,
    pub report: CalibrationReport<T>,
    pub targets: Vec<TargetResult<T>>,
}

/// One calibration followed by a measurement and reconstruction of every
/// target.
pub fn calibrate_trial<T: Real>(cfg: &Config, seed: u64, sigma: f64, at_least: usize) -> CliResult<CalibOutcome<T>> {
    let (a, mut oracle) = load_system::<T>(cfg, seed, sigma)?;
    let xs = targets::<T>(cfg, seed, at_least)?;
    let cal_cfg = CalibrationConfig {
        span_images: if cfg.calibration.span_targets { xs.clone() } else { Vec::new() },
        cond_bound: cfg.calibration.cond_bound,
        ..Default::default()
    };
    let (recv, report) = calibrate(&mut oracle, &a, &cal_cfg)?;
    let mut results = Vec::with_capacity(xs.len());
    for x in xs {
        let y = oracle.speckle_measure(&x)?;
        let final_error = match_error(&y, &recv, &x, 1, 0.0, 0)?;
        let recon = run_reconstruct(cfg, &y, &recv, &x)?;
        let baseline = run_reconstruct(cfg, &y, &a, &x)?;
        results.push(TargetResult {
            target: x,
            final_error,
            recon,
            baseline,
        });
    }
    Ok(CalibOutcome {
        recv,
        report,
        targets: results,
    })
}
