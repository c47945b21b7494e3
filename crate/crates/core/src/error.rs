use thiserror::Error;

/// Errors raised by the model, channel and solver layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {block}: expected {expected}, found {found}")]
    Dimension {
        block: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("index {index} out of range for {what} (len {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("conic solver failure: {0}")]
    Solver(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(block: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { block, expected, found })
    }
}
