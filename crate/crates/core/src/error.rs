use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("lower-right block is singular (size {size}, numerical rank {rank})")]
    SingularBlock { size: usize, rank: usize },

    #[error(
        "unsupported symbol-extension factor {0} (only 2 is supported on an unextended channel)"
    )]
    UnsupportedFactor(usize),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        message: String,
        line: usize,
        column: usize,
    },

    #[error(
        "dimension mismatch in `{field}`: expected {expected_rows}x{expected_cols}, found {found}"
    )]
    DimensionMismatch {
        field: String,
        expected_rows: usize,
        expected_cols: usize,
        found: String,
    },

    #[error("neutralization count {k} is half-integral; extend the channel over two uses first")]
    NeedsExtension { k: String },

    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),

    #[error("region is unbounded")]
    UnboundedRegion,

    #[error("power {power} does not exceed relay noise-forwarding power {headroom}")]
    LowSnrUnsupported { power: f64, headroom: f64 },

    #[error("{excluded} of {trials} trials failed verification")]
    UnstableConfiguration { excluded: usize, trials: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn from_json(err: serde_json::Error) -> Self {
        Error::Parse {
            message: err.to_string(),
            line: err.line(),
            column: err.column(),
        }
    }
}
