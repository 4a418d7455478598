use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure category, used by the command-line front end to pick an
/// exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Config,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("cannot decode image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("no samples found under {0}")]
    NoSamples(PathBuf),

    #[error("unknown class label {0:?}")]
    UnknownClass(String),

    #[error("failed to load stack {id}: {reason}")]
    Load { id: String, reason: String },

    #[error("{file}:{line}: {reason}")]
    Format {
        file: String,
        line: usize,
        reason: String,
    },

    #[error("window exceeds stack depth (n = {n}, depth = {depth})")]
    WindowExceedsDepth { n: usize, depth: usize },

    #[error("window length must be at least 1")]
    EmptyWindow,

    #[error("focal index {focal} outside stack of depth {depth}")]
    FocalOutOfRange { focal: usize, depth: usize },

    #[error("layer {height}x{width} exceeds canonical size {target}")]
    Oversized {
        height: usize,
        width: usize,
        target: usize,
    },

    #[error("class {class} has {count} samples, needs at least {needed}")]
    InsufficientClassSamples {
        class: String,
        count: usize,
        needed: usize,
    },

    #[error("fold index {fold} out of range for {k} folds")]
    FoldOutOfRange { fold: usize, k: usize },

    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),

    #[error("sample {id:?} is out of order (ids must be written in ascending order)")]
    OutOfOrder { id: String },

    #[error("sample {id:?} has {found} layers, expected {expected}")]
    LayerCountMismatch {
        id: String,
        found: usize,
        expected: usize,
    },

    #[error("unknown sample id {0:?}")]
    UnknownId(String),

    #[error("{0} split ids were never packed")]
    MissingSamples(usize),

    #[error("bad magic: expected \"PSTK\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: String, expected: String },

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("truncated blob: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("index/blob inconsistency: {0}")]
    IndexMismatch(String),

    #[error("prediction file {file} line {line}: {reason}")]
    Prediction {
        file: String,
        line: usize,
        reason: String,
    },

    #[error("id {0:?} missing from ground truth")]
    MissingTruth(String),

    #[error("no reports to aggregate")]
    EmptyReports,

    #[error("empty {0} split")]
    EmptySplit(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("pool grid {grid} does not divide {size}")]
    IndivisiblePool { grid: usize, size: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn decode(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Decode {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn format(file: impl ToString, line: usize, reason: impl ToString) -> Self {
        Error::Format {
            file: file.to_string(),
            line,
            reason: reason.to_string(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_)
            | Error::WindowExceedsDepth { .. }
            | Error::EmptyWindow
            | Error::IndivisiblePool { .. }
            | Error::FoldOutOfRange { .. } => ErrorKind::Config,
            Error::NonFiniteLoss { .. } | Error::FocalOutOfRange { .. } => ErrorKind::Internal,
            _ => ErrorKind::Input,
        }
    }
}
