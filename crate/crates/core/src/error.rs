use thiserror::Error;

/// Errors raised across the crate.
///
/// Each variant maps to a stable [`ErrorKind`] so front ends can translate
/// failures into exit codes without string matching.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic: expected \"SKDT\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0} (expected 1)")]
    VersionMismatch(u16),

    #[error("unsupported dtype code {0} (expected 1 = float64)")]
    DtypeMismatch(u8),

    #[error("payload length mismatch: header declares {expected} values, found {found} bytes")]
    PayloadLengthMismatch { expected: usize, found: usize },

    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("invalid shape {0:?}: every dimension must be at least 1")]
    InvalidShape(Vec<usize>),

    #[error("shape {shape:?} holds {expected} values but {found} were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty input")]
    EmptyInput,

    #[error("regularization strength must be positive, got {0}")]
    NonPositiveEpsilon(f64),

    #[error("degenerate ranks: {0}")]
    DegenerateRanks(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: usize },
}

/// Coarse classification of [`Error`] used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Format,
    Shape,
    Degenerate,
    Argument,
    Divergence,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io(_) => ErrorKind::Io,
            Error::BadMagic(_)
            | Error::VersionMismatch(_)
            | Error::DtypeMismatch(_)
            | Error::PayloadLengthMismatch { .. }
            | Error::NonFinite(_) => ErrorKind::Format,
            Error::InvalidShape(_) | Error::DataLength { .. } | Error::ShapeMismatch(_) => {
                ErrorKind::Shape
            }
            Error::DegenerateRanks(_) | Error::Degenerate(_) => ErrorKind::Degenerate,
            Error::EmptyInput | Error::NonPositiveEpsilon(_) | Error::InvalidArgument(_) => {
                ErrorKind::Argument
            }
            Error::Diverged { .. } => ErrorKind::Divergence,
        }
    }

    /// Distinct numeric code per tensor-file failure; other errors share 0.
    pub fn format_code(&self) -> u8 {
        match self {
            Error::BadMagic(_) => 1,
            Error::VersionMismatch(_) => 2,
            Error::DtypeMismatch(_) => 3,
            Error::PayloadLengthMismatch { .. } => 4,
            Error::NonFinite(_) => 5,
            _ => 0,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
