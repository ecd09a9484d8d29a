use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("random sequential adsorption placed {placed} of {requested} spins before exhausting {attempts} attempts")]
    PackingFailure {
        placed: usize,
        requested: usize,
        attempts: usize,
    },

    #[error("spins {i} and {k} coincide; coupling is undefined")]
    DegenerateGeometry { i: usize, k: usize },

    #[error("at least {required} spins are required, got {got}")]
    InsufficientSpins { required: usize, got: usize },

    #[error("state vector for {n} spins exceeds the cap of {max}")]
    TooLarge { n: usize, max: usize },

    #[error("closed form requires alpha >= d (d = {d}, alpha = {alpha})")]
    DomainError { d: usize, alpha: f64 },

    #[error("quadrature did not reach tolerance {tolerance:e} (estimated error {estimate:e})")]
    QuadratureFailure { tolerance: f64, estimate: f64 },

    #[error("fit needs at least {required} usable points, got {got}")]
    InsufficientData { required: usize, got: usize },

    #[error("curve shows no decay within the time grid")]
    DegenerateCurve,

    #[error("power-law fit needs strictly positive data, found ({x}, {y})")]
    NonPositiveValue { x: f64, y: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
