use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamSet};
use super::real::{c, Real};
use super::NumError;

/// Hyperparameters for AdamW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamWConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamWConfig {
            lr,
            weight_decay,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Optimizer state: step count plus first and second moments per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T: Real> {
    pub step: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Real> AdamWState<T> {
    pub fn new(params: &ParamSet<T>, cfg: AdamWConfig) -> Self {
        let zeros = || -> Vec<Vec<T>> {
            params
                .tensors()
                .iter()
                .map(|t| vec![T::zero(); t.numel()])
                .collect()
        };
        AdamWState {
            step: 0,
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }
}

/// One decoupled-weight-decay Adam step that *descends* along `grads`.
pub fn adamw_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &Grads<T>,
    state: &mut AdamWState<T>,
) -> Result<(), NumError> {
    if grads.bufs().len() != params.len() || state.first_moment.len() != params.len() {
        return Err(NumError::Incompatible(format!(
            "optimizer expects {} tensors, got {} gradients",
            params.len(),
            grads.bufs().len()
        )));
    }
    for (i, t) in params.tensors().iter().enumerate() {
        if grads.get(i).len() != t.numel() || state.first_moment[i].len() != t.numel() {
            return Err(NumError::ShapeMismatch {
                expected: t.shape().to_vec(),
                found: vec![grads.get(i).len()],
            });
        }
    }
    if !grads.is_finite() {
        return Err(NumError::NonFinite("gradient"));
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let lr: T = c(state.lr);
    let decay: T = c(1.0 - state.lr * state.weight_decay);
    let (b1t, b2t): (T, T) = (c(b1), c(b2));
    let (one_m_b1, one_m_b2): (T, T) = (c(1.0 - b1), c(1.0 - b2));
    let (bc1t, bc2t, eps): (T, T, T) = (c(bc1), c(bc2), c(state.eps));

    for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads.get(i);
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for (j, p) in tensor.data_mut().iter_mut().enumerate() {
            m[j] = b1t * m[j] + one_m_b1 * g[j];
            v[j] = b2t * v[j] + one_m_b2 * g[j] * g[j];
            let m_hat = m[j] / bc1t;
            let v_hat = v[j] / bc2t;
            *p = *p * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
