use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("classical Laplacian: theta = 2 has no singular-integral representation")]
    ClassicalLaplacian,

    #[error("integral diverges: {0}")]
    Divergence(String),

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("quadrature did not converge: {0}")]
    NonConvergence(String),

    #[error("assembled operator is singular or indefinite: {0}")]
    Indefinite(String),

    #[error("non-finite value at t = {t} (max |u| before step {last_max:e})")]
    NonFinite {
        t: f64,
        last_max: f64,
        state: Vec<f64>,
    },

    #[error("domain too small at t = {t}: {detail}")]
    DomainTooSmall { t: f64, detail: String },

    #[error("range does not straddle threshold: {0}")]
    NoBracket(String),

    #[error("monotonicity violated: {0}")]
    NonMonotone(String),

    #[error("negative values: {0}")]
    Negative(String),

    #[error("terminal value is nonzero: {0}")]
    NonzeroTerminal(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
