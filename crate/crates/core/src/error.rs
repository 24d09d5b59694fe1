use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: &'static str },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite state after solver step {step}")]
    Numerical { step: usize },
    #[error("non-finite loss at iteration {iter}")]
    Diverged { iter: u64 },
    #[error("backward: {0}")]
    Backward(&'static str),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
