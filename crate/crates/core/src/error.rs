use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid box ({x_min}, {y_min}, {x_max}, {y_max}): {reason}")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        reason: &'static str,
    },

    #[error("invalid link: {0}")]
    InvalidLink(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("detection {index} has category {category} which is not in the category set")]
    UnknownCategory { index: usize, category: i64 },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("sample {index} has non-binary correctness {value}")]
    NonBinaryCorrectness { index: usize, value: f64 },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("kernel denominator vanished at query score {score}")]
    ZeroDenominator { score: f64 },

    #[error("{path}: record {index}: {message}")]
    Record {
        path: String,
        index: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Whether this error came from the filesystem rather than from the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
