use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("no pinned profile exists for gamma = {gamma} (requires |gamma| < 2)")]
    Nonexistence { gamma: f64 },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("length mismatch: expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite field value at t = {t}")]
    NonFinite { t: f64 },

    #[error("blowup cap exceeded at t = {t}: sup|u| = {sup}")]
    CapExceeded { t: f64, sup: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("newton iteration did not converge after {iterations} iterations (|G| = {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("state is outside the modulation tube: residual {residual} > {radius}")]
    OutOfTube { residual: f64, radius: f64 },

    #[error("bracket error: {0}")]
    Bracket(String),

    #[error("frame stride {stride} too coarse for growth rate {rate}")]
    StrideTooCoarse { stride: f64, rate: f64 },

    #[error("zero input has no Nehari projection")]
    ZeroInput,

    #[error("line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
