use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the post-processing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or schema problems: wrong vector lengths, unknown names, mismatched profiles.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Input value outside the support of a function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("fit error ({engine}): {message}")]
    Fit { engine: String, message: String },

    #[error("prediction error: {0}")]
    Prediction(String),

    /// Malformed input data, with the 1-based data row when known.
    #[error("data error in {file}{}: {message}", row.map(|r| format!(" row {r}")).unwrap_or_default())]
    Data {
        file: String,
        row: Option<usize>,
        message: String,
    },

    #[error("empty predictor matrix: all {dropped} candidate rows were dropped")]
    EmptyMatrix { dropped: usize },

    #[error("model/data mismatch: {what} (model {model}, current {current})")]
    Mismatch {
        what: String,
        model: String,
        current: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn fit(engine: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Fit {
            engine: engine.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
