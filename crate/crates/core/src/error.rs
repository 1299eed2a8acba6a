use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing class directories under {root}: {}", missing.join(", "))]
    MissingClassDirs { root: PathBuf, missing: Vec<String> },

    #[error("no decodable images found under {0}")]
    EmptyDataset(PathBuf),

    #[error("class {class} has only {count} samples, {required} required")]
    UnderPopulated {
        class: String,
        count: usize,
        required: usize,
    },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("length mismatch: {0} true labels vs {1} predictions")]
    LengthMismatch(usize, usize),

    #[error(
        "non-finite training loss at epoch {epoch} (learning rate {learning_rate}); \
         the learning rate is likely too aggressive"
    )]
    NonFiniteLoss { epoch: usize, learning_rate: f64 },

    #[error("non-finite GAN loss at epoch {epoch}; last good checkpoint: {}", last_good.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    GanDiverged {
        epoch: usize,
        last_good: Option<PathBuf>,
    },

    #[error("pretrained weights for {backbone} not found: {detail}")]
    MissingWeights { backbone: String, detail: String },

    #[error("checksum mismatch for {path}: expected {expected}, got {actual}")]
    ChecksumMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("image codec error for {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("malformed record in {path} line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("{0}")]
    Backend(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
