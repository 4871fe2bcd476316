use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown covariate label `{0}`")]
    UnknownLabel(String),

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("system has {rows} rows but {cols} columns")]
    Underdetermined { rows: usize, cols: usize },

    #[error("no usable event times ({skipped} skipped)")]
    NoUsableEventTimes { skipped: usize },

    #[error("negative hazard {value} at t = {time} for subject {subject}")]
    NegativeHazard { time: f64, subject: usize, value: f64 },

    #[error("survivor fraction {fraction:e} at t = {time} is below 1e-4")]
    VanishingSurvivors { time: f64, fraction: f64 },

    #[error("path enumeration over {mediators} mediators exceeds the 2^15 limit")]
    TooManyPaths { mediators: usize },

    #[error("{discarded} of {total} bootstrap replicates discarded (limit 20%)")]
    BootstrapFailed { discarded: usize, total: usize },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
