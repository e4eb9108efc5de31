//! Dense arrays, reverse-mode differentiation, and optimization.

mod array;
mod gradcheck;
mod optim;
pub mod tape;

use thiserror::Error;

pub use array::{Array, Grads, Param, ParamStore};
pub use gradcheck::{grad_check, GradCheckEntry, GradCheckOptions, GradCheckReport};
pub use optim::{adamw_step, lr_at_step, stable_softmax, AdamW, OptState};
pub use tape::{Mat, SparseRows, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch { context: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("softmax row has every entry masked")]
    AllMasked,
    #[error("invalid learning-rate schedule: {0}")]
    InvalidSchedule(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("empty input: {0}")]
    Empty(String),
}
