use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} = {value} exceeds the supported limit of {limit}")]
    ResourceLimit {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("time {t} outside schedule domain [0, {t_f}]")]
    Domain { t: f64, t_f: f64 },

    #[error("norm drift {drift:e} exceeds tolerance at dt = {dt:e}")]
    StepSize { drift: f64, dt: f64 },

    #[error("no hard instance found after {tried} candidates: {diagnostics}")]
    NoHardInstance { tried: usize, diagnostics: String },

    #[error("study aborted: {failed} of {total} runs failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
