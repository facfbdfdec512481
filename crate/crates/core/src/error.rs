use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("score {score} outside [{min}, {max}]")]
    OutOfRange { score: f64, min: f64, max: f64 },

    #[error("no raters for sample")]
    NoRaters,

    #[error("invalid rating {rating}{}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    InvalidRating { rating: i64, line: Option<u64> },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {term}")]
    Numeric { term: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("model format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("unsupported model format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("Pearson correlation undefined: zero variance in {0}")]
    UndefinedCorrelation(&'static str),

    #[error("training diverged at epoch {epoch}, step {step}: non-finite {term}")]
    Diverged { epoch: usize, step: usize, term: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn numeric(term: impl Into<String>) -> Self {
        Error::Numeric { term: term.into() }
    }
}
