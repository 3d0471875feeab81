use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("index out of range in {op}: entry {position} has index {index}, bound is {bound}")]
    Index {
        op: &'static str,
        position: usize,
        index: usize,
        bound: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("graph is disconnected: {} components with sizes {sizes:?}", sizes.len())]
    Disconnected { sizes: Vec<usize> },

    #[error("parse error{}: {message}", record.map(|r| format!(" in record {r}")).unwrap_or_default())]
    Parse {
        record: Option<usize>,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
