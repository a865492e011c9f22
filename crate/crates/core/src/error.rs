use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("manifest schema error: missing required column(s): {}", .missing.join(", "))]
    ManifestSchema { missing: Vec<String> },

    #[error("manifest row {row}: {message}")]
    ManifestRow { row: usize, message: String },

    #[error("cohort empty: class 0 has {class0} record(s), class 1 has {class1} record(s)")]
    CohortEmpty { class0: usize, class1: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("empty mask: {0}")]
    EmptyMask(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("segmenter config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("adapter does not support capability `{0}`")]
    UnsupportedCapability(&'static str),

    #[error("unknown pathology label `{label}`; valid labels: {}", .valid.join(", "))]
    UnknownLabel { label: String, valid: Vec<String> },

    #[error("adapter error: {0}")]
    Adapter(String),

    #[error("degenerate tree: {0}")]
    DegenerateTree(String),

    #[error("missing feature `{0}` in row")]
    MissingFeature(String),

    #[error("length mismatch: {0}")]
    Length(String),

    #[error("feature mode mismatch: tree fitted on `{tree}`, table is `{table}`")]
    ModeMismatch { tree: String, table: String },

    #[error("serialization error: {0}")]
    Serde(String),

    #[error("stage `{stage}` failed (last completed stage: {last_ok}): {source}")]
    Stage {
        stage: String,
        last_ok: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
