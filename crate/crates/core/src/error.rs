use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    /// An `exp` argument above the overflow guard. Never clamped.
    #[error("exponent argument {0:.6e} exceeds the overflow limit")]
    Overflow(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("IDX file holds labels (magic 0x{0:08x}), expected images")]
    IdxLabelFile(u32),

    #[error("bad IDX magic 0x{0:08x}, expected 0x00000803")]
    IdxMagic(u32),

    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("dimension overflow in header: {0}")]
    DimensionOverflow(String),

    #[error("bad model file: {0}")]
    ModelFormat(String),

    #[error("{0}")]
    Check(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Png(#[from] png::EncodingError),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
