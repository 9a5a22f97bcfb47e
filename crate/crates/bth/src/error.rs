//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BthError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("non-finite value at site {site}")]
    NonFinite { site: usize },
    #[error("division by (numerically) zero value at site {site}")]
    DivisionByZero { site: usize },
    #[error("logarithm of non-positive value at site {site}")]
    NonPositiveLog { site: usize },
    #[error("singular shift-sum operator: Fourier mode {mode} has eigenvalue magnitude {magnitude:e}")]
    SingularShiftSum { mode: usize, magnitude: f64 },
    #[error("operation unsupported in windowed mode: {0}")]
    WindowedUnsupported(&'static str),
    #[error("access outside the valid interval: site {site}, valid [{lo}, {hi}]")]
    OutsideValid { site: i64, lo: i64, hi: i64 },
    #[error("empty interval: {0}")]
    EmptyInterval(String),
    #[error("reliable band exhausted: {0}")]
    BandExhausted(String),
    #[error("dressing compatibility violated at stage {stage}: lattice mean {mean:e}")]
    Compatibility { stage: usize, mean: f64 },
    #[error("gcd condition violated: gcd({order}, {sites}) = {gcd}")]
    Gcd { order: i64, sites: usize, gcd: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("residual {achieved:e} above tolerance {tolerance:e}: {what}")]
    Residual { what: String, achieved: f64, tolerance: f64 },
    #[error("integration diverged at step {step}")]
    Diverged { step: usize },
    #[error("out-of-range index: {0}")]
    OutOfRange(String),
}

pub type Result<T> = std::result::Result<T, BthError>;
