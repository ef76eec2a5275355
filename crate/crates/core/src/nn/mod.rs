//! Minimal differentiable core: ReLU perceptrons with explicit tapes, Adam,
//! and a finite-difference gradient checker. Everything here is `f64`.

mod adam;
mod gradcheck;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, GradCheck};
pub use mlp::{param_count, Mlp, MlpGrads, Tape};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid layer sizes {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("parameter count mismatch: expected {expected}, got {actual}")]
    ParamCount { expected: usize, actual: usize },
    #[error("tape does not belong to the current parameters of this network")]
    StaleTape,
    #[error("non-finite value {value} in {context}")]
    NonFinite { context: String, value: f64 },
}
