//! Reverse-mode automatic differentiation over dense tensors.
//!
//! The engine covers exactly the primitives the network needs: affine
//! maps, ReLU, axis reductions, concatenation/slicing, constant-weighted
//! row mixing, inverse-distance row interpolation, dropout, and a fused
//! softmax cross-entropy loss. Operations are recorded on a [`Tape`];
//! [`Tape::backward`] replays them in exact reverse order.

#[cfg(test)]
mod tests;

mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::{gemm_acc, gemm_acc_nt, gemm_acc_tn, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward() called on a consumed tape")]
    TapeConsumed,
    #[error("backward() requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("cross-entropy target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("{op}: reduction over an empty axis")]
    EmptyAxis { op: &'static str },
}
