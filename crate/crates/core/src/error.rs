use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("synonym '{phrase}' maps to both '{first}' and '{second}'")]
    DuplicateSynonym {
        phrase: String,
        first: String,
        second: String,
    },

    #[error("invalid lexicon: {0}")]
    InvalidLexicon(String),

    #[error("unknown finding '{0}'")]
    UnknownFinding(String),

    #[error("invalid polarity token '{0}' (expected yes or no)")]
    BadPolarity(String),

    #[error("malformed finding pattern '{0}'")]
    BadPattern(String),

    #[error("unknown region '{region}' in record {record}")]
    UnknownRegion { region: String, record: String },

    #[error("box out of range in record {record}: {detail}")]
    BoxOutOfRange { record: String, detail: String },

    #[error("image '{0}' not present in region map")]
    UnknownImage(String),

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("contrastive loss needs at least one fake finding")]
    EmptyFakeSet,

    #[error("contrastive loss needs at least one real finding")]
    EmptyRealSet,

    #[error("veracity output {0} is outside (0, 1); apply a sigmoid first")]
    ProbabilityOutOfRange(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no embedding for '{0}'")]
    MissingEmbedding(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("rewriter unavailable: {0}")]
    Rewriter(String),

    #[error("external model not configured: {0}")]
    ExternalMetric(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl AsRef<std::path::Path>, line: usize, message: impl ToString) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            line,
            message: message.to_string(),
        }
    }
}
