use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {context} (left {left:?}, right {right:?})")]
    DimensionMismatch {
        context: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is rank deficient: smallest singular value {smallest:e} <= tolerance {tol:e}")]
    RankDeficient { smallest: f64, tol: f64 },

    #[error("degenerate denominator y0ᵀΣy0 = {value:e} (guard {tol:e}){}", index.map(|i| format!(" at basis index {i}")).unwrap_or_default())]
    DegenerateDenominator {
        value: f64,
        tol: f64,
        index: Option<usize>,
    },

    #[error("ill-conditioned system: cond = {cond:e} exceeds bound {bound:e}")]
    IllConditioned { cond: f64, bound: f64 },

    #[error("near-zero components in pre-measure response at indices {indices:?}")]
    NearZeroComponents { indices: Vec<usize> },

    #[error("error iteration diverged at iteration {iteration}: error {error:e} > {factor} x minimum {min:e}")]
    Divergence {
        iteration: usize,
        error: f64,
        min: f64,
        factor: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("every lambda component was excluded (denominator underflow)")]
    AllComponentsExcluded,
}

impl Error {
    /// True for failures caused by the numbers rather than by the caller's
    /// arguments.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::DegenerateDenominator { .. }
                | Error::IllConditioned { .. }
                | Error::NearZeroComponents { .. }
                | Error::Divergence { .. }
                | Error::AllComponentsExcluded
        )
    }
}
