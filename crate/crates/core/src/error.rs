use thiserror::Error;

use crate::model::ValidationReport;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QcqpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid problem: {0}")]
    Invalid(ValidationReport),
    #[error("augmented system not positive definite (block {block}, pivot {pivot})")]
    Indefinite { block: usize, pivot: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}
