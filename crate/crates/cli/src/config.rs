//! Experiment configuration, read from TOML. Every section and key is
//! optional; unknown keys are rejected.

use std::path::Path;

use mismatch_core::reconstruct::{ReconstructConfig, StepRule};
use mismatch_core::Precision;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub system: SystemSection,
    pub solver: SolverSection,
    pub target: TargetSection,
    pub reconstruct: ReconstructSection,
    pub outputs: OutputsSection,
    pub sweep: SweepSection,
    pub calibration: CalibrationSection,
    pub curves: CurvesSection,
    pub noise_limit: NoiseLimitSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub m: usize,
    pub n: usize,
    /// Image width in pixels; defaults to √N when N is a square, else N.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    pub seed: u64,
    pub noise_sigma: f64,
    pub precision: String,
    /// Load `A` from an MMRX file instead of drawing it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_file: Option<String>,
    /// Load the hidden matrix from an MMRX file. Required with `a_file`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_u_file: Option<String>,
}

impl Default for SystemSection {
    fn default() -> Self {
        SystemSection {
            m: 64,
            n: 256,
            width: None,
            seed: 1,
            noise_sigma: 0.0,
            precision: "double".into(),
            a_file: None,
            a_u_file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Algo1,
    Algo2,
    Algo3,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Algo1 => "algo1",
            SolverKind::Algo2 => "algo2",
            SolverKind::Algo3 => "algo3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub kind: SolverKind,
    pub epochs: usize,
    /// `flat_gray`, `random`, `sparse`, `target` or a PGM path.
    pub pm_image: String,
    /// Gray level of `flat_gray`; mean level of `random`.
    pub pm_level: f64,
    /// Multiplier applied to the target when `pm_image = "target"`.
    pub pm_scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_tol: Option<f64>,
    pub divergence_factor: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            kind: SolverKind::Algo2,
            epochs: 20,
            pm_image: "flat_gray".into(),
            pm_level: 0.5,
            pm_scale: 1.0,
            stop_tol: None,
            divergence_factor: mismatch_core::matched::DEFAULT_DIVERGENCE_FACTOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetSection {
    /// `sparse`, `smooth` or `files`.
    pub kind: String,
    pub sparsity: usize,
    pub count: usize,
    pub files: Vec<String>,
}

impl Default for TargetSection {
    fn default() -> Self {
        TargetSection {
            kind: "sparse".into(),
            sparsity: 8,
            count: 3,
            files: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructSection {
    pub enabled: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_reg: Option<f64>,
    pub max_iters: usize,
    pub nonneg: bool,
    pub debias: bool,
    /// `backtracking` or `fixed`.
    pub step_rule: String,
    pub conv_tol: f64,
}

impl Default for ReconstructSection {
    fn default() -> Self {
        let d = ReconstructConfig::default();
        ReconstructSection {
            enabled: true,
            lambda_reg: d.lambda_reg,
            max_iters: d.max_iters,
            nonneg: d.nonneg,
            debias: d.debias,
            step_rule: "backtracking".into(),
            conv_tol: d.conv_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputsSection {
    pub directory: String,
    pub emit_svg: bool,
    /// `gen` also writes the hidden matrix.
    pub emit_unknown: bool,
}

impl Default for OutputsSection {
    fn default() -> Self {
        OutputsSection {
            directory: "out".into(),
            emit_svg: false,
            emit_unknown: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub sigmas: Vec<f64>,
    /// Effective oracle noise is `sigma · noise_scale`, bringing the nominal
    /// levels to the amplitude of desk-scale measurements.
    pub noise_scale: f64,
    pub trials: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            sigmas: vec![0.0, 0.5, 1.0, 1.5, 2.0, 5.0],
            noise_scale: 1e-3,
            trials: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    /// Substitute the targets into the basis so they lie in its span.
    pub span_targets: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cond_bound: Option<f64>,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection {
            span_targets: true,
            cond_bound: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurvesSection {
    pub i_values: Vec<u32>,
    pub grid_points: usize,
}

impl Default for CurvesSection {
    fn default() -> Self {
        CurvesSection {
            i_values: vec![0, 1, 2, 4, 8, 16, 32],
            grid_points: 199,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseLimitSection {
    pub k_values: Vec<f64>,
    pub sigma: f64,
    pub mu: f64,
    pub trials: usize,
    pub burn_in: usize,
}

impl Default for NoiseLimitSection {
    fn default() -> Self {
        NoiseLimitSection {
            k_values: vec![0.0, 0.3, 0.6],
            sigma: 1.0,
            mu: 0.0,
            trials: 10_000,
            burn_in: 200,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn precision(&self) -> CliResult<Precision> {
        self.system
            .precision
            .parse()
            .map_err(|e: String| CliError::Config(format!("system: {e}")))
    }

    pub fn width(&self) -> usize {
        self.system.width.unwrap_or_else(|| {
            let n = self.system.n;
            let r = (n as f64).sqrt().round() as usize;
            if r * r == n {
                r
            } else {
                n
            }
        })
    }

    pub fn height(&self) -> usize {
        self.system.n / self.width()
    }

    pub fn reconstruct_config(&self) -> CliResult<ReconstructConfig> {
        let r = &self.reconstruct;
        let step_rule = match r.step_rule.as_str() {
            "backtracking" => StepRule::Backtracking,
            "fixed" => StepRule::Fixed,
            other => return Err(CliError::Config(format!("unknown step_rule {other:?}"))),
        };
        let cfg = ReconstructConfig {
            lambda_reg: r.lambda_reg,
            max_iters: r.max_iters,
            step_rule,
            conv_tol: r.conv_tol,
            nonneg: r.nonneg,
            debias: r.debias,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        let s = &self.system;
        if s.m == 0 || s.m >= s.n {
            return bad(format!("system: need 0 < m < n, got m={} n={}", s.m, s.n));
        }
        if !(s.noise_sigma >= 0.0) || !s.noise_sigma.is_finite() {
            return bad(format!("system: noise_sigma must be >= 0, got {}", s.noise_sigma));
        }
        self.precision()?;
        let w = self.width();
        if w == 0 || s.n % w != 0 {
            return bad(format!("system: width {w} does not divide n={}", s.n));
        }
        if s.a_file.is_some() != s.a_u_file.is_some() {
            return bad("system: a_file and a_u_file must be given together".into());
        }
        if self.solver.epochs == 0 {
            return bad("solver: epochs must be positive".into());
        }
        if !(self.solver.divergence_factor > 1.0) {
            return bad("solver: divergence_factor must be > 1".into());
        }
        if !matches!(self.target.kind.as_str(), "sparse" | "smooth" | "files") {
            return bad(format!("target: unknown kind {:?}", self.target.kind));
        }
        if self.target.kind == "files" && self.target.files.is_empty() {
            return bad("target: kind = \"files\" needs a non-empty files list".into());
        }
        if self.target.kind != "files" && self.target.count == 0 {
            return bad("target: count must be positive".into());
        }
        if self.target.sparsity == 0 || self.target.sparsity > s.n {
            return bad(format!("target: sparsity must be in 1..={}", s.n));
        }
        self.reconstruct_config()?;
        if self.sweep.trials == 0 || self.sweep.sigmas.is_empty() {
            return bad("sweep: need at least one sigma and one trial".into());
        }
        if self.sweep.sigmas.iter().any(|v| !(*v >= 0.0)) || !(self.sweep.noise_scale >= 0.0) {
            return bad("sweep: sigmas and noise_scale must be >= 0".into());
        }
        if self.curves.grid_points == 0 {
            return bad("curves: grid_points must be positive".into());
        }
        Ok(())
    }
}
