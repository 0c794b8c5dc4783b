//! Serialization: frame-annotation documents (JSON, canonical key
//! order, unknown fields preserved), the binary tensor file format and
//! the run configuration.

pub mod config;
pub mod frame;
pub mod tensor_file;

use thiserror::Error;

pub use config::RunConfig;
pub use frame::{
    parse_frame, parse_frame_set, read_frame_set, write_frame, write_frame_set, write_frame_set_file,
};
pub use tensor_file::{read_tensor, write_tensor};

#[derive(Debug, Error)]
pub enum IoError {
    /// Malformed document: syntax or wrong field types.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    /// Well-formed document violating a schema invariant.
    #[error("validation error: {0}")]
    Validation(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("tensor payload checksum mismatch: header {expected:08x}, payload {actual:08x}")]
    ChecksumMismatch { expected: u32, actual: u32 },
    #[error("bad tensor file: {0}")]
    Format(String),
}

impl IoError {
    pub(crate) fn from_json(e: &serde_json::Error) -> Self {
        IoError::Parse { line: e.line(), column: e.column(), message: e.to_string() }
    }
}
