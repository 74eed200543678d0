use thiserror::Error;

/// Errors raised by the detector models, the reconstruction routines and the fitters.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inputs have inconsistent lengths or shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The photon-number truncation cannot represent the probes to the required tail mass.
    #[error("truncation {truncation} is too small, at least {required} is needed")]
    Truncation { truncation: usize, required: usize },

    /// The photon-number truncation is larger than the dense solver accepts.
    #[error("truncation {truncation} exceeds the dense solver limit of {limit}; rescale the probes first")]
    TruncationLimit { truncation: usize, limit: usize },

    /// An iterative solver hit its iteration cap before reaching stationarity.
    #[error("no convergence after {iterations} iterations (projected gradient norm {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    /// Explicit inversion of a loss channel amplified rounding beyond the accepted bound.
    #[error("ill-conditioned loss inversion: pre-clamp violation {diagnostic:e} exceeds {bound:e}")]
    IllConditioned { diagnostic: f64, bound: f64 },

    /// A requested target is not reached anywhere on the data or search range.
    #[error("out of range: {0}")]
    Range(String),

    /// Fidelity between operators whose click vectors vanish identically.
    #[error("fidelity is undefined for an identically zero operand")]
    UndefinedFidelity,

    /// Every data row was excluded from the objective.
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// A computed probability left [0, 1] by more than rounding.
    #[error("internal consistency error: {0}")]
    Consistency(String),

    /// The model fit hit its iteration cap; `best` holds the last iterate.
    #[error(
        "model fit did not converge after {iterations} iterations (projected gradient norm {residual:e})"
    )]
    FitConvergence {
        iterations: usize,
        residual: f64,
        best: Box<crate::modelfit::FitReport>,
    },

    /// Malformed input documents.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
