//! Decoder-only transformer policy, seeded ancestral sampling and
//! teacher-forced maximum-likelihood pretraining.

mod mle;
mod model;
mod sample;

use thiserror::Error;

use crate::numcore::NumError;

pub use mle::{mean_cross_entropy, mle_pretrain, MleConfig, MleReport};
pub use model::{Decoder, Policy, PolicyConfig};
pub use sample::{sample_from_logits, sample_response, GeneratedResponse, GREEDY_TEMPERATURE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
    #[error("sequence of length {len} exceeds context {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("token {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("empty token sequence")]
    EmptyInput,
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },
    #[error(transparent)]
    Num(#[from] NumError),
}

#[cfg(test)]
mod tests;
