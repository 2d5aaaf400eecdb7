use thiserror::Error;

#[derive(Debug, Error)]
pub enum GailError {
    #[error("index out of range: {what} = {index} (limit {limit})")]
    Index {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("stationary distribution is not unique (second eigenvalue modulus {0:.3e})")]
    Degenerate(f64),

    #[error("KL divergence is infinite: support violation at state {state}, action {action}")]
    Divergence { state: usize, action: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("batch length mismatch: expert {expert}, policy {policy}")]
    BatchMismatch { expert: usize, policy: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("too few iterations: need at least {need}, got {got}")]
    TooFewIterations { need: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    TomlWrite(#[from] toml::ser::Error),
}

impl GailError {
    /// Process exit status: 2 for invalid input, 3 for numerical failures
    /// or anything that goes wrong once a valid run is under way.
    pub fn exit_code(&self) -> i32 {
        match self {
            GailError::Index { .. }
            | GailError::Dimension(_)
            | GailError::Config(_)
            | GailError::InvalidMdp(_)
            | GailError::InvalidPolicy(_)
            | GailError::EmptyBatch
            | GailError::BatchMismatch { .. }
            | GailError::TooFewIterations { .. }
            | GailError::Json(_)
            | GailError::Toml(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, GailError>;

pub(crate) fn check_index(what: &'static str, index: usize, limit: usize) -> Result<()> {
    if index < limit {
        Ok(())
    } else {
        Err(GailError::Index { what, index, limit })
    }
}
