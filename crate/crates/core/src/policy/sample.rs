use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numcore::{kernels, Real};
use crate::textdata::EOS;

use super::{Policy, PolicyError};

/// Temperatures at or below this decode greedily.
pub const GREEDY_TEMPERATURE: f64 = 1e-6;

/// A sampled response with the log-probability of each token under the
/// unscaled policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedResponse {
    pub state: Vec<usize>,
    /// Ends with `EOS` unless the length cap was reached first.
    pub response: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub z: u64,
    pub temperature: f64,
}

impl GeneratedResponse {
    pub fn total_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

/// Draws one token from `softmax(logits / temperature)`. Greedy below
/// [`GREEDY_TEMPERATURE`] with ties going to the lowest id.
pub fn sample_from_logits<T: Real, R: Rng + ?Sized>(
    logits: &[T],
    temperature: f64,
    rng: &mut R,
) -> usize {
    if temperature <= GREEDY_TEMPERATURE {
        return kernels::argmax_lowest(logits);
    }
    let mut probs: Vec<f64> = logits.iter().map(|l| l.as_f64() / temperature).collect();
    kernels::softmax_inplace(&mut probs);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `acc` just short of 1; take the last token with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Ancestral sampling driven entirely by the stream seeded from `z`.
pub fn sample_response<T: Real>(
    policy: &Policy<T>,
    state: &[usize],
    z: u64,
    temperature: f64,
) -> Result<GeneratedResponse, PolicyError> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(PolicyError::BadTemperature(temperature));
    }
    let cfg = policy.config();
    if state.len() > cfg.max_context {
        return Err(PolicyError::ContextOverflow {
            len: state.len(),
            max: cfg.max_context,
        });
    }
    let cap = cfg.max_response.min(cfg.max_context + 1 - state.len());
    let mut rng = ChaCha8Rng::seed_from_u64(z);
    let mut dec = policy.decoder();
    let mut logits = policy.prefill(&mut dec, state)?;
    let mut response = Vec::with_capacity(cap);
    let mut log_probs = Vec::with_capacity(cap);
    loop {
        let tok = sample_from_logits(&logits, temperature, &mut rng);
        let lp = kernels::log_softmax(&logits)[tok];
        response.push(tok);
        log_probs.push(lp.as_f64());
        if tok == EOS || response.len() >= cap {
            break;
        }
        logits = policy.step(&mut dec, tok)?;
    }
    Ok(GeneratedResponse {
        state: state.to_vec(),
        response,
        log_probs,
        z,
        temperature,
    })
}
