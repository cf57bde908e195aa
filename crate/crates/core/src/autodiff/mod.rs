//! Reverse-mode automatic differentiation over a recorded operation list.
//!
//! A [`Tape`] records every operation in execution order; [`Tape::backward`]
//! walks the records in reverse and accumulates vector-Jacobian products.
//! Values are `f64` throughout. Gradients are only computed along paths that
//! start at a leaf registered with [`Tape::parameter`].

mod gemm;
mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use tape::{Gradients, NodeId, OpKind, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

/// Floor applied inside square roots and divisions.
pub const EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("row index {index} out of range for {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("non-finite value encountered during {0}")]
    NonFiniteValue(String),
    #[error("variable belongs to a different tape")]
    ForeignVariable,
}

pub type AutodiffResult<T> = std::result::Result<T, AutodiffError>;
