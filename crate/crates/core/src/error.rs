use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("unsupported bit depth in {path}: only 8-bit grayscale is accepted")]
    UnsupportedBitDepth { path: PathBuf },

    #[error("{path} is a color image; convert it to 8-bit grayscale first")]
    ColorImage { path: PathBuf },

    #[error("unsupported image extension for {path} (expected .png or .pgm)")]
    UnsupportedFormat { path: PathBuf },

    #[error("image dimensions {height}x{width} do not match data length {len}")]
    BadImageData {
        height: usize,
        width: usize,
        len: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("patch side {patch} does not fit in a {height}x{width} image")]
    PatchTooLarge {
        patch: usize,
        height: usize,
        width: usize,
    },

    #[error("only {available} candidate patches in the search window, need k = {k}")]
    NotEnoughCandidates { available: usize, k: usize },

    #[error("pixel ({row}, {col}) is not covered by any patch estimate")]
    Uncovered { row: usize, col: usize },

    #[error("matrix is singular or not positive definite (pivot {pivot} = {value:e})")]
    Singular { pivot: usize, value: f64 },

    #[error(
        "SURE weights need an invertible Gram matrix (pivot {pivot} = {value:e}); \
         use the Noisier2Noise pilot instead"
    )]
    SureSingular { pivot: usize, value: f64 },

    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// Errors caused by the requested parameters rather than by I/O or by the data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::PatchTooLarge { .. }
                | Error::NotEnoughCandidates { .. }
                | Error::UnsupportedFormat { .. }
        )
    }
}
