use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RdcError {
    #[error("input {height}x{width} must be padded to a multiple of {multiple}")]
    PaddingRequired {
        height: usize,
        width: usize,
        multiple: usize,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{name} = {value} is outside [0, 1]")]
    Range { name: &'static str, value: f64 },
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("version mismatch: {0}")]
    Version(String),
    #[error("corrupt stream at byte {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
    #[error("non-finite value in loss term `{term}`")]
    NonFinite { term: &'static str },
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("sweep cell alpha={alpha} beta={beta}: {source}")]
    Cell {
        alpha: f64,
        beta: f64,
        source: Box<RdcError>,
    },
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, RdcError>;
