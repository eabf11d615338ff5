use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing directory {0}")]
    MissingDirectory(PathBuf),
    #[error("sample {id} has no matching file in {missing_in}")]
    NameMismatch { id: String, missing_in: PathBuf },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(PathBuf),
    #[error("{path}: shape mismatch: {detail}")]
    ShapeMismatch { path: PathBuf, detail: String },
    #[error("{path}: malformed file: {detail}")]
    Malformed { path: PathBuf, detail: String },
    #[error("{path}: checkpoint format version {found}, this build reads version {expected}")]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("{0}: corrupt checkpoint (bad magic or checksum)")]
    CorruptChecksum(PathBuf),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown config key {0}")]
    UnknownKey(String),
    #[error("split {split} not listed in {path}")]
    UnknownSplit { path: PathBuf, split: String },
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error(transparent)]
    Core(#[from] ldguid_core::Error),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn malformed(path: &Path, detail: impl ToString) -> Error {
        Error::Malformed { path: path.to_path_buf(), detail: detail.to_string() }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MissingDirectory(_) => "missing_directory",
            Error::NameMismatch { .. } => "name_mismatch",
            Error::UnsupportedFormat(_) => "unsupported_format",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::Malformed { .. } => "malformed",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::CorruptChecksum(_) => "corrupt_checksum",
            Error::Parse(_) => "parse",
            Error::UnknownKey(_) => "unknown_key",
            Error::UnknownSplit { .. } => "unknown_split",
            Error::TooFewSamples { .. } => "too_few_samples",
            Error::Core(_) => "core",
            Error::Invalid(_) => "invalid",
        }
    }
}
