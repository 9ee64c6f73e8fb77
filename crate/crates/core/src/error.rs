use thiserror::Error;

/// Errors raised across the library. Each variant names the offending value.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("effective rank undefined at k = {k}: tail beyond the truncation is empty")]
    UndefinedRank { k: usize },

    #[error("critical index k* does not exist for b = {b}, n = {n} within the truncation")]
    MissingCriticalIndex { b: f64, n: usize },

    #[error("parameter norm is zero")]
    ZeroParameterNorm,

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("regularization {lambda} outside the regime: {detail} (boundary {boundary})")]
    RegimeMismatch {
        lambda: f64,
        boundary: f64,
        detail: String,
    },

    #[error("kernel is singular: smallest eigenvalue {min} below cutoff {cutoff}")]
    SingularKernel { min: f64, cutoff: f64 },

    #[error(
        "gradient descent diverged at step {step}: step size {gamma} exceeds the stability \
         threshold {threshold}"
    )]
    Diverged {
        step: usize,
        gamma: f64,
        threshold: f64,
    },

    #[error("closed-form adversarial risk requires a Gaussian design, got {0}")]
    NonGaussianDesign(String),

    #[error("network of {requested} parameters exceeds the memory budget of {budget}")]
    MemoryBudget { requested: usize, budget: usize },

    #[error("too few Monte Carlo trials: {0} (need at least 2)")]
    TooFewTrials(usize),

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
