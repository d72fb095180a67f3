use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("missing parameters: {}", .0.join(", "))]
    MissingParams(Vec<String>),

    #[error("autograd: {0}")]
    Autograd(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint {path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },

    #[error("image {path}: {detail}")]
    Image { path: PathBuf, detail: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("training diverged at iteration {iter}: {detail}")]
    Diverged { iter: u64, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// What went wrong reading or validating a checkpoint file.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic {0:?}, expected \"HSNC\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("embedded config invalid: {0}")]
    Config(String),
    #[error("tensor {name}: shape {found} does not match config shape {expected}")]
    ShapeMismatch { name: String, expected: String, found: String },
    #[error("tensor {0} is not part of the configured model")]
    UnknownTensor(String),
    #[error("missing tensors: {}", .0.join(", "))]
    MissingTensors(Vec<String>),
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("malformed record: {0}")]
    Malformed(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape { op, detail: detail.into() })
}

pub(crate) fn arg_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument { op, detail: detail.into() })
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
