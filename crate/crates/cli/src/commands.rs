//! Subcommands. Each writes its artifacts plus the resolved configuration
//! and tool version into the output directory.

use std::path::{Path, PathBuf};

use mismatch_core::diagnostics::{
    curve_family, lambda_vector, noise_limit_stats, open_unit_grid, LambdaReport, NoiseLimitConfig,
};
use mismatch_core::matched::ErrorTrace;
use mismatch_core::{Error, Precision, Real};
use rayon::prelude::*;

use crate::config::{Config, SolverKind};
use crate::error::{CliError, CliResult};
use crate::formats::{line_plot, write_file, write_mmrf, write_mmrx, write_pgm, Cell, Csv, Series};
use crate::pipeline::{calibrate_trial, matched_trial, seed_for_trial, targets, Reconstruction};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const VERSION_FILE: &str = "VERSION";

/// Threads for sweeps; `MMRX_THREADS` caps it.
pub const THREADS_ENV: &str = "MMRX_THREADS";

pub struct Ctx {
    pub cfg: Config,
    pub out: PathBuf,
    pub quiet: bool,
}

impl Ctx {
    pub fn prepare(&self) -> CliResult<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        write_file(&self.path(RESOLVED_CONFIG), self.cfg.to_toml().as_bytes())?;
        let version = format!("mismatch {}\n", env!("CARGO_PKG_VERSION"));
        write_file(&self.path(VERSION_FILE), version.as_bytes())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn seed(&self) -> u64 {
        self.cfg.system.seed
    }
}

macro_rules! with_precision {
    ($p:expr, $f:ident ( $($arg:expr),* )) => {
        match $p {
            Precision::Single => $f::<f32>($($arg),*),
            Precision::Double => $f::<f64>($($arg),*),
        }
    };
}

pub fn cmd_gen(ctx: &Ctx) -> CliResult<()> {
    ctx.prepare()?;
    with_precision!(ctx.cfg.precision()?, gen(ctx))
}

fn gen<T: Real>(ctx: &Ctx) -> CliResult<()> {
    let (a, oracle) = crate::pipeline::load_system::<T>(&ctx.cfg, ctx.seed(), ctx.cfg.system.noise_sigma)?;
    write_mmrx(&ctx.path("A.mmrx"), a.entries())?;
    if ctx.cfg.outputs.emit_unknown {
        write_mmrx(&ctx.path("A_u.mmrx"), oracle.unknown_matrix_for_verification().entries())?;
    }
    ctx.say(format!("wrote {}x{} matrices to {}", a.rows(), a.cols(), ctx.out.display()));
    Ok(())
}

fn trace_csv(trace: &ErrorTrace) -> Csv {
    let mut csv = Csv::new(trace.precision, &["iteration", "error_2", "error_inf", "oracle_calls"]);
    for r in &trace.records {
        csv.row(&[
            Cell::Int(r.iteration as u64),
            Cell::Num(r.error_2),
            Cell::Num(r.error_inf),
            Cell::Int(r.oracle_calls),
        ]);
    }
    csv
}

fn quality_rows(csv: &mut Csv, prefix: &str, r: &Option<Reconstruction<impl Real>>) {
    if let Some(r) = r {
        let q = &r.quality;
        let key = |k: &str| format!("{prefix}{k}");
        csv.row(&[Cell::Text(&key("psnr")), Cell::Num(q.psnr)]);
        csv.row(&[Cell::Text(&key("support_f1")), Cell::Num(q.support_f1)]);
        csv.row(&[Cell::Text(&key("relative_error")), Cell::Num(q.relative_error)]);
        csv.row(&[Cell::Text(&key("support_exact")), Cell::Bool(q.support_exact)]);
        csv.row(&[Cell::Text(&key("success")), Cell::Bool(q.success())]);
        csv.row(&[Cell::Text(&key("failed")), Cell::Bool(q.failed())]);
        csv.row(&[Cell::Text(&key("solver_iterations")), Cell::Int(r.report.iterations as u64)]);
    }
}

pub fn cmd_matched(ctx: &Ctx) -> CliResult<()> {
    if ctx.cfg.solver.kind == SolverKind::Algo3 {
        return Err(CliError::Config(
            "solver.kind = \"algo3\" is a calibration; run the calibrate command".into(),
        ));
    }
    ctx.prepare()?;
    with_precision!(ctx.cfg.precision()?, matched(ctx))
}

fn matched<T: Real>(ctx: &Ctx) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let kind = cfg.solver.kind;
    let out = matched_trial::<T>(cfg, kind, ctx.seed(), cfg.system.noise_sigma)?;
    trace_csv(&out.trace).write(&ctx.path("trace.csv"))?;

    let mut s = Csv::new(T::PRECISION, &["metric", "value"]);
    s.row(&[Cell::Text("solver"), Cell::Text(kind.as_str())]);
    s.row(&[Cell::Text("precision"), Cell::Text(T::PRECISION.as_str())]);
    s.row(&[Cell::Text("k_eps"), Cell::Num(out.trace.convergence_factor)]);
    if let Some(k) = out.trace.multiplier_estimate {
        s.row(&[Cell::Text("multiplier_estimate"), Cell::Num(k)]);
    }
    s.row(&[Cell::Text("initial_error_2"), Cell::Num(out.trace.initial_error_2)]);
    s.row(&[Cell::Text("trace_final_error_2"), Cell::Num(out.trace.final_error_2())]);
    s.row(&[Cell::Text("final_error"), Cell::Num(out.final_error)]);
    s.row(&[Cell::Text("baseline_error"), Cell::Num(out.baseline_error)]);
    s.row(&[Cell::Text("iterations"), Cell::Int(out.trace.len() as u64)]);
    s.row(&[Cell::Text("stopped_early"), Cell::Bool(out.trace.stopped_early)]);
    s.row(&[Cell::Text("solver_oracle_calls"), Cell::Int(out.solver_calls)]);
    quality_rows(&mut s, "", &out.recon);
    quality_rows(&mut s, "baseline_", &out.baseline);
    s.write(&ctx.path("summary.csv"))?;

    write_pgm(&ctx.path("target.pgm"), &out.target)?;
    if let Some(r) = &out.recon {
        write_pgm(&ctx.path("reconstruction.pgm"), &r.image)?;
    }
    if let Some(r) = &out.baseline {
        write_pgm(&ctx.path("baseline.pgm"), &r.image)?;
    }
    write_mmrf(&ctx.path("recv.mmrf"), &out.recv)?;
    if cfg.outputs.emit_svg {
        let points = std::iter::once((0.0, out.trace.initial_error_2))
            .chain(out.trace.records.iter().map(|r| (r.iteration as f64, r.error_2)))
            .collect();
        let svg = line_plot(
            &format!("{} error trace", kind.as_str()),
            "iteration",
            "error_2",
            &[Series { label: kind.as_str(), points }],
            true,
        );
        write_file(&ctx.path("error.svg"), svg.as_bytes())?;
    }
    let recon = out
        .recon
        .as_ref()
        .map(|r| format!(", psnr {:.2} dB, support F1 {:.3}", r.quality.psnr, r.quality.support_f1))
        .unwrap_or_default();
    ctx.say(format!(
        "{}: k_eps {:.4e}, {} iterations, final error {:.3e} (baseline {:.3e}), {} oracle call(s){recon}",
        kind.as_str(),
        out.trace.convergence_factor,
        out.trace.len(),
        out.final_error,
        out.baseline_error,
        out.solver_calls
    ));
    Ok(())
}

pub fn cmd_calibrate(ctx: &Ctx) -> CliResult<()> {
    ctx.prepare()?;
    with_precision!(ctx.cfg.precision()?, calibrate_cmd(ctx))
}

fn calibrate_cmd<T: Real>(ctx: &Ctx) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let out = calibrate_trial::<T>(cfg, ctx.seed(), cfg.system.noise_sigma, 1)?;
    let r = &out.report;
    let mut rep = Csv::new(Precision::Double, &["metric", "value"]);
    rep.row(&[Cell::Text("precision"), Cell::Text(T::PRECISION.as_str())]);
    rep.row(&[Cell::Text("basis_size"), Cell::Int(r.basis.len() as u64)]);
    rep.row(&[Cell::Text("orthonormality_residual"), Cell::Num(r.orthonormality_residual)]);
    rep.row(&[Cell::Text("cond_gram"), Cell::Num(r.cond_gram)]);
    rep.row(&[Cell::Text("max_offdiag_k"), Cell::Num(r.max_offdiag_k)]);
    rep.row(&[Cell::Text("oracle_calls"), Cell::Int(r.oracle_calls)]);
    rep.write(&ctx.path("report.csv"))?;
    write_mmrf(&ctx.path("recv.mmrf"), &out.recv)?;

    let mut t = Csv::new(
        T::PRECISION,
        &[
            "target",
            "final_error",
            "psnr",
            "support_f1",
            "relative_error",
            "support_exact",
            "success",
            "baseline_support_f1",
        ],
    );
    let mut ok = 0;
    for (i, res) in out.targets.iter().enumerate() {
        write_pgm(&ctx.path(&format!("target_{i}.pgm")), &res.target)?;
        let (psnr, f1, rel, exact, success) = match &res.recon {
            Some(rc) => {
                write_pgm(&ctx.path(&format!("reconstruction_{i}.pgm")), &rc.image)?;
                let q = &rc.quality;
                (q.psnr, q.support_f1, q.relative_error, q.support_exact, q.success())
            }
            None => (f64::NAN, f64::NAN, f64::NAN, false, false),
        };
        ok += success as usize;
        let base = res.baseline.as_ref().map(|b| b.quality.support_f1).unwrap_or(f64::NAN);
        t.row(&[
            Cell::Int(i as u64),
            Cell::Num(res.final_error),
            Cell::Num(psnr),
            Cell::Num(f1),
            Cell::Num(rel),
            Cell::Bool(exact),
            Cell::Bool(success),
            Cell::Num(base),
        ]);
    }
    t.write(&ctx.path("targets.csv"))?;
    ctx.say(format!(
        "calibrated with {} oracle calls (cond {:.3e}, max off-diagonal k {:.3e}); {ok}/{} targets reconstructed",
        r.oracle_calls,
        r.cond_gram,
        r.max_offdiag_k,
        out.targets.len()
    ));
    Ok(())
}

struct StudyRow {
    kind: SolverKind,
    precision: Precision,
    lambda: LambdaReport,
    success: Option<bool>,
    support_f1: f64,
}

fn study<T: Real>(ctx: &Ctx, kind: SolverKind) -> CliResult<StudyRow> {
    let cfg = &ctx.cfg;
    let seed = ctx.seed();
    let sigma = cfg.system.noise_sigma;
    let xs = targets::<T>(cfg, seed, 2)?;
    let (recv, recon) = match kind {
        SolverKind::Algo3 => {
            let out = calibrate_trial::<T>(cfg, seed, sigma, 2)?;
            let recon = out.targets.into_iter().next().and_then(|t| t.recon);
            (out.recv, recon)
        }
        _ => {
            let out = matched_trial::<T>(cfg, kind, seed, sigma)?;
            (out.recv, out.recon)
        }
    };
    let lambda = lambda_vector(&recv, &xs[0], &xs[1])?;
    Ok(StudyRow {
        kind,
        precision: T::PRECISION,
        lambda,
        success: recon.as_ref().map(|r| r.quality.success()),
        support_f1: recon.map(|r| r.quality.support_f1).unwrap_or(f64::NAN),
    })
}

pub fn cmd_precision_study(ctx: &Ctx) -> CliResult<()> {
    ctx.prepare()?;
    let mut rows = Vec::new();
    for precision in [Precision::Double, Precision::Single] {
        for kind in [SolverKind::Algo1, SolverKind::Algo2, SolverKind::Algo3] {
            let row = with_precision!(precision, study(ctx, kind))?;
            let mut csv = Csv::new(precision, &["component", "lambda"]);
            for (i, v) in row.lambda.lambda.iter().enumerate() {
                csv.row(&[Cell::Int(i as u64), Cell::Num(*v)]);
            }
            csv.write(&ctx.path(&format!("lambda_{}_{}.csv", kind.as_str(), precision.as_str())))?;
            rows.push(row);
        }
    }
    let mut v = Csv::new(
        Precision::Double,
        &[
            "algorithm",
            "precision",
            "cv",
            "verdict",
            "lambda_min",
            "lambda_max",
            "lambda_mean",
            "excluded",
            "reconstruction_success",
            "support_f1",
        ],
    );
    for r in &rows {
        let success = match r.success {
            Some(true) => "true",
            Some(false) => "false",
            None => "skipped",
        };
        v.row(&[
            Cell::Text(r.kind.as_str()),
            Cell::Text(r.precision.as_str()),
            Cell::Num(r.lambda.coefficient_of_variation),
            Cell::Text(r.lambda.verdict.as_str()),
            Cell::Num(r.lambda.min),
            Cell::Num(r.lambda.max),
            Cell::Num(r.lambda.mean),
            Cell::Int(r.lambda.excluded as u64),
            Cell::Text(success),
            Cell::Num(r.support_f1),
        ]);
        ctx.say(format!(
            "{} {:6}: CV {:.3e} ({}), reconstruction {success}",
            r.kind.as_str(),
            r.precision.as_str(),
            r.lambda.coefficient_of_variation,
            r.lambda.verdict.as_str()
        ));
    }
    v.write(&ctx.path("verdicts.csv"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    pub trial: u64,
    pub final_error: f64,
    pub psnr: f64,
    pub support_f1: f64,
    pub diverged: bool,
}

fn sweep_trial<T: Real>(cfg: &Config, sigma: f64, trial: u64) -> CliResult<SweepRow> {
    let seed = seed_for_trial(cfg.system.seed, trial);
    let eff = sigma * cfg.sweep.noise_scale;
    let mut row = SweepRow {
        sigma,
        trial,
        final_error: f64::NAN,
        psnr: f64::NAN,
        support_f1: f64::NAN,
        diverged: false,
    };
    let kind = cfg.solver.kind;
    if kind == SolverKind::Algo3 {
        let out = calibrate_trial::<T>(cfg, seed, eff, 1)?;
        let n = out.targets.len() as f64;
        row.final_error = out.targets.iter().map(|t| t.final_error).sum::<f64>() / n;
        if cfg.reconstruct.enabled {
            let qs = out.targets.iter().filter_map(|t| t.recon.as_ref().map(|r| r.quality));
            let (p, f): (Vec<f64>, Vec<f64>) = qs.map(|q| (q.psnr, q.support_f1)).unzip();
            row.psnr = p.iter().sum::<f64>() / n;
            row.support_f1 = f.iter().sum::<f64>() / n;
        }
        return Ok(row);
    }
    match matched_trial::<T>(cfg, kind, seed, eff) {
        Ok(out) => {
            row.final_error = out.final_error;
            if let Some(r) = out.recon {
                row.psnr = r.quality.psnr;
                row.support_f1 = r.quality.support_f1;
            }
        }
        Err(CliError::Core(Error::Divergence { .. })) => {
            row.final_error = f64::INFINITY;
            row.support_f1 = 0.0;
            row.diverged = true;
        }
        Err(e) => return Err(e),
    }
    Ok(row)
}

/// Every (σ, trial) pair of the configured sweep, in σ-major order.
pub fn sweep_rows<T: Real>(cfg: &Config) -> CliResult<Vec<SweepRow>> {
    let jobs: Vec<(f64, u64)> = cfg
        .sweep
        .sigmas
        .iter()
        .flat_map(|&s| (0..cfg.sweep.trials as u64).map(move |t| (s, t)))
        .collect();
    let run = || jobs.par_iter().map(|&(s, t)| sweep_trial::<T>(cfg, s, t)).collect::<CliResult<Vec<_>>>();
    match thread_cap()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("{THREADS_ENV}: {e}")))?
            .install(run),
        None => run(),
    }
}

fn thread_cap() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub sigma: f64,
    pub mean_final_error: f64,
    pub std_final_error: f64,
    pub mean_psnr: f64,
    pub mean_support_f1: f64,
    pub failure_rate: f64,
    pub diverged: usize,
}

pub fn summarize(cfg: &Config, rows: &[SweepRow]) -> Vec<SweepSummary> {
    cfg.sweep
        .sigmas
        .iter()
        .enumerate()
        .map(|(i, &sigma)| {
            let group = &rows[i * cfg.sweep.trials..(i + 1) * cfg.sweep.trials];
            let n = group.len() as f64;
            let mean = |f: &dyn Fn(&SweepRow) -> f64| group.iter().map(f).sum::<f64>() / n;
            let mfe = mean(&|r| r.final_error);
            let var = group.iter().map(|r| (r.final_error - mfe).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            SweepSummary {
                sigma,
                mean_final_error: mfe,
                std_final_error: var.sqrt(),
                mean_psnr: mean(&|r| r.psnr),
                mean_support_f1: mean(&|r| r.support_f1),
                failure_rate: mean(&|r| (r.support_f1 < 0.5) as u8 as f64),
                diverged: group.iter().filter(|r| r.diverged).count(),
            }
        })
        .collect()
}

pub fn cmd_noise_sweep(ctx: &Ctx) -> CliResult<()> {
    ctx.prepare()?;
    with_precision!(ctx.cfg.precision()?, noise_sweep(ctx))
}

fn noise_sweep<T: Real>(ctx: &Ctx) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let rows = sweep_rows::<T>(cfg)?;
    let mut csv = Csv::new(T::PRECISION, &["sigma", "trial", "final_error", "psnr", "support_f1", "status"]);
    for r in &rows {
        csv.row(&[
            Cell::Num(r.sigma),
            Cell::Int(r.trial),
            Cell::Num(r.final_error),
            Cell::Num(r.psnr),
            Cell::Num(r.support_f1),
            Cell::Text(if r.diverged { "diverged" } else { "ok" }),
        ]);
    }
    csv.write(&ctx.path("sweep.csv"))?;
    let summary = summarize(cfg, &rows);
    let mut s = Csv::new(
        T::PRECISION,
        &[
            "sigma",
            "effective_sigma",
            "trials",
            "mean_final_error",
            "std_final_error",
            "mean_psnr",
            "mean_support_f1",
            "failure_rate",
            "diverged",
        ],
    );
    for g in &summary {
        s.row(&[
            Cell::Num(g.sigma),
            Cell::Num(g.sigma * cfg.sweep.noise_scale),
            Cell::Int(cfg.sweep.trials as u64),
            Cell::Num(g.mean_final_error),
            Cell::Num(g.std_final_error),
            Cell::Num(g.mean_psnr),
            Cell::Num(g.mean_support_f1),
            Cell::Num(g.failure_rate),
            Cell::Int(g.diverged as u64),
        ]);
        ctx.say(format!(
            "sigma {:>5}: mean final error {:.4e}, mean support F1 {:.3}, failure rate {:.2}",
            g.sigma, g.mean_final_error, g.mean_support_f1, g.failure_rate
        ));
    }
    s.write(&ctx.path("summary.csv"))?;
    if cfg.outputs.emit_svg {
        let points = summary.iter().map(|g| (g.sigma, g.mean_final_error)).collect();
        let svg = line_plot(
            "mean final match error vs noise",
            "sigma",
            "final error",
            &[Series {
                label: cfg.solver.kind.as_str(),
                points,
            }],
            false,
        );
        write_file(&ctx.path("sweep.svg"), svg.as_bytes())?;
    }
    Ok(())
}

pub fn cmd_curves(ctx: &Ctx) -> CliResult<()> {
    ctx.prepare()?;
    let c = &ctx.cfg.curves;
    let grid = open_unit_grid(c.grid_points);
    let rows = curve_family(&c.i_values, &grid)?;
    let mut csv = Csv::new(Precision::Double, &["i", "x", "value"]);
    for r in &rows {
        csv.row(&[Cell::Int(r.i as u64), Cell::Num(r.x), Cell::Num(r.value)]);
    }
    csv.write(&ctx.path("curves.csv"))?;
    if ctx.cfg.outputs.emit_svg {
        let labels: Vec<String> = c.i_values.iter().map(|i| format!("i = {i}")).collect();
        let series: Vec<Series<'_>> = c
            .i_values
            .iter()
            .zip(&labels)
            .map(|(&i, label)| Series {
                label,
                points: rows.iter().filter(|r| r.i == i).map(|r| (r.x, r.value)).collect(),
            })
            .collect();
        let svg = line_plot("(1 - x) x^i", "x", "value", &series, false);
        write_file(&ctx.path("curves.svg"), svg.as_bytes())?;
    }
    ctx.say(format!("{} curve points written", rows.len()));
    Ok(())
}

pub fn cmd_noise_limit(ctx: &Ctx) -> CliResult<()> {
    ctx.prepare()?;
    let nl = &ctx.cfg.noise_limit;
    let mut csv = Csv::new(
        Precision::Double,
        &[
            "k_eps",
            "sigma",
            "mu",
            "trials",
            "empirical_mean",
            "mean_standard_error",
            "empirical_variance",
            "variance_standard_error",
            "stated_variance",
            "ar1_variance",
            "stated_variance_rejected",
        ],
    );
    for (i, &k) in nl.k_values.iter().enumerate() {
        let s = noise_limit_stats(&NoiseLimitConfig {
            k_eps: k,
            sigma: nl.sigma,
            mu: nl.mu,
            trials: nl.trials,
            burn_in: nl.burn_in,
            seed: seed_for_trial(ctx.seed(), i as u64),
        })?;
        csv.row(&[
            Cell::Num(k),
            Cell::Num(s.sigma),
            Cell::Num(s.mu),
            Cell::Int(s.trials as u64),
            Cell::Num(s.empirical_mean),
            Cell::Num(s.mean_standard_error),
            Cell::Num(s.empirical_variance),
            Cell::Num(s.variance_standard_error),
            Cell::Num(s.stated_variance),
            Cell::Num(s.ar1_variance),
            Cell::Bool(s.stated_variance_rejected),
        ]);
        ctx.say(format!(
            "k_eps {k}: mean {:.4} ± {:.4}, variance {:.4} ± {:.4}; sigma^2/(1+k) = {:.4}, (1-k)sigma^2/(1+k) = {:.4}; first form rejected: {}",
            s.empirical_mean,
            s.mean_standard_error,
            s.empirical_variance,
            s.variance_standard_error,
            s.stated_variance,
            s.ar1_variance,
            s.stated_variance_rejected
        ));
    }
    csv.write(&ctx.path("noise_limit.csv"))
}

/// Output directory from the flag, else from the config.
pub fn output_dir(flag: Option<&Path>, cfg: &Config) -> PathBuf {
    flag.map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&cfg.outputs.directory))
}
