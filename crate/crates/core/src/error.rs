use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("key {key} out of range for n = {n}")]
    KeyOutOfRange { key: u64, n: u64 },

    #[error("bucket {t} out of range for d = {d}")]
    BucketOutOfRange { t: usize, d: usize },

    #[error("estimate unavailable: key {0} participates in no bucket")]
    EstimateUnavailable(u64),

    #[error("sketch state was built under different randomness")]
    RandomnessMismatch,

    #[error("value {0} is not an integer but the sketch uses exact integer counters")]
    NonIntegral(f64),

    #[error("integer counter overflow")]
    Overflow,

    #[error("oracle protocol error: {0}")]
    Protocol(String),

    #[error("calibration failed after {iterations} iterations (last frequency {last_frequency:.3})")]
    Calibration { iterations: usize, last_frequency: f64 },

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
