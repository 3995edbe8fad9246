//! Dense tensors, reverse-mode differentiation, AdamW and the warmup-linear
//! learning-rate schedule.

mod batch;
mod gradcheck;
mod graph;
pub mod kernels;
mod optim;
mod params;
mod real;
mod schedule;
mod tensor;

use thiserror::Error;

pub use batch::batch_grads;
pub use gradcheck::{grad_check, grad_check_params, GradCheckOptions, GradCheckReport};
pub use graph::{sigmoid, Backward, Graph, Var};
pub use optim::{adamw_step, AdamWConfig, AdamWState};
pub use params::{uniform_init, Grads, ParamSet};
pub use real::{c, Precision, Real};
pub use schedule::LrSchedule;
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("expected a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("function is not differentiable at {tensor}[{index}]")]
    NonDifferentiable { tensor: String, index: usize },
    #[error("incompatible parameters: {0}")]
    Incompatible(String),
}

/// Numerically stable softmax of a finite vector.
pub fn softmax<T: Real>(logits: &[T]) -> Result<Vec<T>, NumError> {
    if logits.is_empty() {
        return Err(NumError::Empty("logits"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(NumError::NonFinite("logits"));
    }
    let mut out = logits.to_vec();
    kernels::softmax_inplace(&mut out);
    Ok(out)
}
