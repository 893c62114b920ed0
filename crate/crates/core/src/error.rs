use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("zero degree in adjacency row {row}")]
    ZeroDegree { row: usize },
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("structure error: {0}")]
    Structure(String),
    #[error("loss error: {0}")]
    Loss(String),
    #[error("baseline error: class slot {0} has no labeled support item")]
    Baseline(usize),
    #[error("non-finite loss at iteration {0}")]
    NanLoss(usize),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn dim_err(op: &'static str, expected: &[usize], got: &[usize]) -> Error {
    Error::Dimension {
        op,
        detail: alloc::format!("expected {:?}, got {:?}", expected, got),
    }
}

pub(crate) fn shapes_err(op: &'static str, shapes: &[&[usize]]) -> Error {
    let shapes: Vec<_> = shapes.iter().map(|s| s.to_vec()).collect();
    Error::Dimension {
        op,
        detail: alloc::format!("incompatible shapes {:?}", shapes),
    }
}
