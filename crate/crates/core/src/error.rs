//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("quaternion has (near-)zero norm: {norm:e}")]
    ZeroQuaternion { norm: f64 },

    #[error("grid dims {dims:?} too small: need at least 2 voxels per axis")]
    GridTooSmall { dims: [u32; 3] },

    #[error("point {point:?} too close to grid boundary for finite differences")]
    GridBoundary { point: [f64; 3] },

    #[error("expected {expected} {what}, got {got}")]
    CountMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("raster size mismatch: {a_w}x{a_h} vs {b_w}x{b_h}")]
    RasterSizeMismatch {
        a_w: usize,
        a_h: usize,
        b_w: usize,
        b_h: usize,
    },

    #[error("non-finite {what} at iteration {iter}")]
    NonFinite { what: String, iter: u64 },

    #[error("no Gaussians left at iteration {iter}")]
    EmptyModel { iter: u64 },

    #[error("scene has {got} cameras, need at least {need}")]
    TooFewCameras { need: usize, got: usize },

    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic (expected {expected:?})")]
    BadMagic { path: PathBuf, expected: String },

    #[error("{path}: unsupported format version {got} (supported: {supported})")]
    BadVersion {
        path: PathBuf,
        got: u32,
        supported: u32,
    },

    #[error("{path}: malformed {format}: {why}")]
    Malformed {
        path: PathBuf,
        format: &'static str,
        why: String,
    },
}

impl Error {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(what: &'static str, why: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            why: why.into(),
        }
    }
}
