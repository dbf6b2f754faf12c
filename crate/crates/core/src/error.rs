use thiserror::Error;

/// Errors raised by the solver and its validators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("quadrature did not converge: {0}")]
    Accuracy(String),

    #[error(
        "exponent argument {argument:.3} exceeds the cap {cap} at |u| = {value:.4}; \
         review grid resolution or amplitude scale"
    )]
    Overflow { argument: f64, cap: f64, value: f64 },

    #[error("assumption {assumption} violated: {detail}")]
    Assumption { assumption: String, detail: String },

    #[error("mountain-pass geometry not found: {0}")]
    Geometry(String),

    #[error("no convergence after {sweeps} sweeps (residual {residual:.3e}, tolerance {tolerance:.3e})")]
    Nonconvergence {
        sweeps: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("stagnation: path maximum increased for {sweeps} consecutive sweeps (energy {energy:.6e})")]
    Stagnation { sweeps: usize, energy: f64 },

    #[error("maximization failed: {0}")]
    Maximization(String),

    #[error("limit not converged: log-functional residual {residual:.3e} > {tolerance:.3e}")]
    LimitNotConverged { residual: f64, tolerance: f64 },

    #[error("unsupported dimension N = {0}")]
    UnsupportedDimension(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn assumption(name: &str, detail: impl Into<String>) -> Self {
        Error::Assumption {
            assumption: name.to_string(),
            detail: detail.into(),
        }
    }

    /// True for failures of an iterative numerical procedure (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Accuracy(_)
                | Error::Overflow { .. }
                | Error::Nonconvergence { .. }
                | Error::Stagnation { .. }
                | Error::Maximization(_)
                | Error::LimitNotConverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
