use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-Morse critical point at {location:?}: min |hessian eigenvalue| = {min_abs_eig:e}")]
    NonMorse { location: Vec<f64>, min_abs_eig: f64 },

    #[error("generic-assumption violation: {0}")]
    GenericAssumption(String),

    #[error("topology error: {0}; try a larger box or a finer grid")]
    Topology(String),

    #[error("classification error: {0}")]
    Classification(String),

    #[error("no metastability: the pairing has no finite saddle/minimum pair")]
    NoMetastability,

    #[error("trajectory {trajectory} diverged at step {step}")]
    Divergence { trajectory: usize, step: usize },

    #[error("fit unreliable: decay window has {window} points (need at least 10)")]
    FitUnreliable { window: usize },

    #[error("horizon too short: {censored} of {total} trajectories never reached the target")]
    HorizonTooShort { censored: usize, total: usize },

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("box too small: boundary ring carries {boundary_fraction:e} of the unnormalized mass")]
    BoxTooSmall { boundary_fraction: f64 },

    #[error("solver error: {message} (best residuals {residuals:?})")]
    Solver { message: String, residuals: Vec<f64> },

    #[error("admissibility error: {0}")]
    Admissibility(String),

    #[error("cannot bound time: decay constant is zero")]
    CannotBound,
}
