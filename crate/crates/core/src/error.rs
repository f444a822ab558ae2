use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{0} does not divide {1}")]
    Divisibility(usize, usize),

    #[error("zero-energy column {0}")]
    ZeroColumn(usize),

    #[error("unsupported frame size: {0}")]
    UnsupportedFrame(String),

    #[error("frame columns do not have uniform norm (spread {0:.3e})")]
    NonUniformColumns(f64),

    #[error("pilot frame admits a phase-permutation ambiguity (coherence {coherence:.6} >= {nu:.6})")]
    Ambiguous { coherence: f64, nu: f64 },

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("stepsize fell below floor {floor:e} at iteration {iteration}")]
    StepsizeUnderflow { floor: f64, iteration: usize },

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
