use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimension(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("position ({x}, {y}) out of bounds for {height}x{width} map")]
    Bounds {
        x: usize,
        y: usize,
        height: usize,
        width: usize,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("mode mismatch: {0}")]
    Mode(String),
    #[error("parameter count mismatch: expected {expected}, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("tensor file format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
