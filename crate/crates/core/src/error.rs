use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation (p < 1, t <= 0, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Sampled kernel too narrow for the spatial step.
    #[error("kernel under-resolved: std dev {std_dev:.3e} < 2h = {two_h:.3e}")]
    Resolution { std_dev: f64, two_h: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("reduction to heat form impossible: {0}")]
    ReductionImpossible(String),

    #[error("initial data not representable on the grid: {0}")]
    Truncation(String),

    #[error("invalid nonlinearity: {0}")]
    InvalidNonlinearity(String),

    #[error("invalid payoff: {0}")]
    InvalidPayoff(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error(
        "Picard iteration did not converge after {iterations} iterations \
         (last difference {last_difference:.3e}, measured contraction ratio {ratio:.4})"
    )]
    NonConvergence {
        iterations: usize,
        last_difference: f64,
        ratio: f64,
    },

    #[error("local horizon {horizon:.3e} is shorter than the time step {dt:.3e}; refine n_t")]
    HorizonBelowTimeStep { horizon: f64, dt: f64 },

    #[error("solution norm overflowed at t = {t}")]
    NormOverflow { t: f64 },

    #[error("oracle does not cover this problem: {0}")]
    OracleUnsupported(String),

    #[error("finite-difference inner iteration did not converge at step {step}")]
    FdInnerNonConvergence { step: usize },

    #[error("configuration rejected:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}
