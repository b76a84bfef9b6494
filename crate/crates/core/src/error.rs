use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{path}:{line}: pixel ({x}, {y}) outside {width}x{height} sensor")]
    PixelOutOfRange {
        path: PathBuf,
        line: usize,
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },

    #[error("{path}:{line}: timestamp {t} is not after the previous sample")]
    NonMonotoneTime { path: PathBuf, line: usize, t: f64 },

    #[error("invalid camera intrinsics: {0}")]
    Intrinsics(String),

    #[error("unsupported stage scale {0}")]
    UnsupportedScale(f64),

    #[error("image {height}x{width} is smaller than the {taps}-tap kernel")]
    KernelTooLarge { taps: usize, width: usize, height: usize },

    #[error("warped event has no valid 2x2 stencil")]
    InvalidStencil,

    #[error("statistics over zero pixels")]
    EmptyImage,

    #[error("variance {0} is negative beyond rounding tolerance")]
    NegativeVariance(f64),

    #[error("non-finite gradient {0:?}")]
    NonFiniteGradient([f64; 3]),

    #[error("empty error sequence")]
    EmptySequence,

    #[error("sequences are not aligned: {0}")]
    Misaligned(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
