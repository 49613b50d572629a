use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("unsupported B-spline support {0} (expected 3 or 7)")]
    UnsupportedSupport(usize),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("dependent atom: residual norm {residual:.3e} after orthogonalization")]
    DependentAtom { residual: f64 },

    #[error("degenerate matrix set: element {position} is linearly dependent on its predecessors")]
    DegenerateSet { position: usize },

    #[error("empty matrix list")]
    EmptyList,

    #[error("payload of {payload} values exceeds {capacity} available directions")]
    PayloadOverflow { payload: usize, capacity: usize },

    #[error("image not foldable at this quality: {0}")]
    NotFoldable(String),

    #[error("container corrupt: {0}")]
    ContainerCorrupt(String),

    #[error("image too narrow: header needs {needed} words, row holds {width}")]
    TooNarrow { needed: usize, width: usize },

    #[error("non-finite value in section")]
    NonFinite,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("image smaller than the {0}x{0} window")]
    ImageTooSmall(usize),

    #[error("zero coefficients")]
    ZeroCoefficients,

    #[error("malformed netpbm file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
