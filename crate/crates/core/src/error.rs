use thiserror::Error;

/// Errors raised across the crate. Model-level invariant violations that are
/// reported as data (see [`crate::linmdp::validate_mdp`]) never show up here.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("feature vector at (state {state}, action {action}) has sup-norm {norm} > 1")]
    FeatureNorm { state: usize, action: usize, norm: f64 },

    #[error("policy is undefined at reachable state {0}")]
    MissingPolicyRow(usize),

    #[error("matrix is not symmetric: |M[{row}][{col}] - M[{col}][{row}]| = {gap}")]
    Asymmetric { row: usize, col: usize, gap: f64 },

    #[error("episode count {episodes} is not a positive multiple of the horizon {horizon}")]
    FoldSize { episodes: usize, horizon: usize },

    #[error("not enough usable points for a slope fit: {0}")]
    SlopeFit(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
