//! Dense `f64` kernels and a reverse-mode tape, sized for a small MLP detector.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use tape::{Elementwise, Gradients, Tape, Var};
pub use tensor::{l2_normalize, l2_normalize_backward, matmul, sigmoid, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("expected rank {expected}, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("{op}: input {value} outside the domain")]
    Domain { op: &'static str, value: f64 },
    #[error("{op}: degenerate input ({reason})")]
    Degenerate { op: &'static str, reason: String },
    #[error("{op}: expected {expected} arguments, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
}
