use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid probabilities: {0}")]
    Probability(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("behavior probability is zero at x={x}, a={a}, u={u}")]
    ZeroBehavior { x: usize, a: usize, u: usize },

    #[error("unknown environment `{0}`")]
    UnknownEnv(String),

    #[error("invalid candidate model: {}", .0.join("; "))]
    InvalidCandidate(Vec<String>),

    #[error("linear program: {0}")]
    Lp(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
