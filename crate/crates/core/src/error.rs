use thiserror::Error;

#[derive(Debug, Error)]
pub enum HteError {
    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("treatment regressor has no variation; model is rank deficient")]
    RankDeficient,

    #[error("optimizer did not converge after {iterations} iterations (max |gradient| = {gradient_norm:e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },

    #[error("likelihood evaluation failed: {0}")]
    Evaluation(String),

    #[error("variant {variant} is not supported for family {family}")]
    UnsupportedVariant { variant: String, family: String },

    #[error("tree {index}: {source}")]
    Tree {
        index: usize,
        #[source]
        source: Box<HteError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HteError>;
