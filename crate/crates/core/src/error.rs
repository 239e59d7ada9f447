use std::path::PathBuf;

use thiserror::Error;

use crate::model::PropertyKind;

pub type Result<T> = std::result::Result<T, PadError>;

#[derive(Debug, Error)]
pub enum PadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate sample_id {0:?}")]
    DuplicateSampleId(String),

    #[error("sample {sample_id:?}: attack_type must be present iff label is attack")]
    AttackTypeMismatch { sample_id: String },

    #[error("sample {sample_id:?}: media file {path} does not exist")]
    MissingMedia { sample_id: String, path: PathBuf },

    #[error("manifest {0:?} has no records")]
    EmptyManifest(String),

    #[error("dataset {dataset:?} has no {split} split")]
    MissingSplit { dataset: String, split: String },

    #[error("protocol: {0}")]
    Protocol(String),

    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("invalid landmarks: {0}")]
    Landmarks(String),

    #[error("{what}: expected {expected}, found {found}")]
    Dimension {
        what: String,
        expected: String,
        found: String,
    },

    #[error("extractor mismatch: expected {expected:?}, found {found:?}")]
    ExtractorMismatch { expected: String, found: String },

    #[error("property mismatch: model is {expected}, input is {found}")]
    PropertyMismatch { expected: String, found: String },

    #[error("missing {0} probability series")]
    MissingSeries(PropertyKind),

    #[error("training data contains a single class ({0})")]
    SingleClass(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("platt calibration did not converge after {iterations} iterations; a larger dev set is needed")]
    CalibrationDiverged { iterations: usize },

    #[error("no {0} samples: rate undefined")]
    EmptyClass(&'static str),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("external command `{command}` failed: {message}")]
    External { command: String, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("artifact digest mismatch: {0}")]
    DigestMismatch(String),

    #[error("internal: {0}")]
    Internal(String),
}

impl PadError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PadError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        PadError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by the caller's data or configuration rather
    /// than a bug.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, PadError::Internal(_))
    }
}
