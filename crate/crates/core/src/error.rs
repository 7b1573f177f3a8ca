use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    /// A malformed or invariant-violating record. `row` is the 1-based data
    /// record number (header excluded).
    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular design (condition estimate {condition:.3e}); offending columns: {}", columns.join(", "))]
    Singular { columns: Vec<String>, condition: f64 },

    #[error("non-finite objective or gradient: {0}")]
    NonFinite(String),

    #[error("newton iterations diverged after {iterations} steps (parameter norm {norm:.3e})")]
    Divergence { iterations: usize, norm: f64 },

    #[error("treatment model needs both arms; only A = {arm} present")]
    SingleArm { arm: u8 },

    #[error("perfect separation; propensity not identifiable")]
    Separation,

    #[error("row {row}: fitted propensity {probability:e} violates positivity (see check_positivity)")]
    Positivity { row: usize, probability: f64 },

    #[error("visit model has no events")]
    NoEvents,

    #[error("monotone partial likelihood; visit model coefficients diverge")]
    MonotoneLikelihood,

    #[error("row {row}: not at risk, inverse-intensity weight undefined")]
    NotAtRisk { row: usize },

    #[error("row {row}: outcome not observed (event = 0)")]
    NonEventRow { row: usize },

    #[error("unknown covariate `{0}`")]
    UnresolvedName(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{failed} of {total} replicates failed ({reason})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        reason: String,
    },

    #[error("nothing to evaluate: {0}")]
    Empty(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
