use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numcore::{adamw_step, batch_grads, c, AdamWConfig, AdamWState, ParamSet, Real};
use crate::textdata::EncodedPair;

use super::{Policy, PolicyError};

/// Teacher-forced cross-entropy training schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MleConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Validation cadence in epochs.
    pub validation_frequency: u64,
    pub seed: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig {
            steps: 300,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.01,
            validation_frequency: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MleReport {
    /// Mean training cross-entropy (nats/token) of each step's batch.
    pub train_losses: Vec<f64>,
    /// `(step, validation cross-entropy)`; step 0 is the starting point.
    pub validation: Vec<(u64, f64)>,
    /// Step whose parameters were returned.
    pub best_step: u64,
}

/// Token-weighted mean negative log-likelihood of the targets.
pub fn mean_cross_entropy<T: Real>(
    policy: &Policy<T>,
    pairs: &[EncodedPair],
) -> Result<f64, PolicyError> {
    let per: Vec<Result<(f64, usize), PolicyError>> = pairs
        .par_iter()
        .map(|p| {
            let (total, per_token) = policy.sequence_log_prob(&p.state, &p.target)?;
            Ok((-total.as_f64(), per_token.len()))
        })
        .collect();
    let (mut nll, mut n) = (0.0, 0usize);
    for r in per {
        let (a, b) = r?;
        nll += a;
        n += b;
    }
    if n == 0 {
        return Err(PolicyError::EmptyInput);
    }
    Ok(nll / n as f64)
}

fn batch_step<T: Real>(
    policy: &mut Policy<T>,
    opt: &mut AdamWState<T>,
    batch: &[(usize, &EncodedPair)],
    step: u64,
    seed: u64,
) -> Result<f64, PolicyError> {
    let dropout = policy.config().dropout > 0.0;
    let model = &*policy;
    let (outs, mut grads) = batch_grads(model.params(), batch, |g, vars, &(idx, pair)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(idx as u64);
        let drop_rng = if dropout { Some(&mut rng) } else { None };
        let (lp, _) =
            model.response_log_probs_tape(g, vars, &pair.state, &pair.target, drop_rng)?;
        let s = g.sum(lp);
        let nll = g.scale(s, -T::one());
        Ok::<_, PolicyError>((nll, pair.target.len()))
    })?;
    let tokens: usize = outs.iter().map(|(_, n)| n).sum();
    let loss = outs.iter().map(|(v, _)| v.as_f64()).sum::<f64>() / tokens as f64;
    if !loss.is_finite() {
        return Err(PolicyError::Diverged {
            step,
            detail: format!("cross-entropy {loss}"),
        });
    }
    grads.scale(c(1.0 / tokens as f64));
    adamw_step(policy.params_mut(), &grads, opt).map_err(|e| PolicyError::Diverged {
        step,
        detail: e.to_string(),
    })?;
    Ok(loss)
}

/// Minimizes teacher-forced cross-entropy of `train` targets. Validation runs
/// every `validation_frequency` epochs and after the last step; the parameters
/// with the lowest validation cross-entropy are kept in `policy`.
pub fn mle_pretrain<T: Real>(
    policy: &mut Policy<T>,
    train: &[EncodedPair],
    validation: &[EncodedPair],
    cfg: &MleConfig,
) -> Result<MleReport, PolicyError> {
    let mut report = MleReport::default();
    if cfg.steps == 0 {
        return Ok(report);
    }
    if train.is_empty() || cfg.batch_size == 0 {
        return Err(PolicyError::EmptyInput);
    }
    let mut opt = AdamWState::new(policy.params(), AdamWConfig::new(cfg.lr, cfg.weight_decay));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let val_every = steps_per_epoch * cfg.validation_frequency.max(1);

    let mut best: Option<(f64, ParamSet<T>)> = None;
    let mut validate = |policy: &Policy<T>, step: u64, report: &mut MleReport| {
        if validation.is_empty() {
            return Ok::<_, PolicyError>(());
        }
        let ce = mean_cross_entropy(policy, validation)?;
        log::info!("mle step {step}: validation cross-entropy {ce:.4}");
        report.validation.push((step, ce));
        if best.as_ref().map_or(true, |(b, _)| ce < *b) {
            best = Some((ce, policy.params().clone()));
            report.best_step = step;
        }
        Ok(())
    };
    validate(policy, 0, &mut report)?;

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(train.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            batch.push((i, &train[i]));
            cursor += 1;
        }
        let loss = batch_step(policy, &mut opt, &batch, step, cfg.seed)?;
        report.train_losses.push(loss);
        if step % val_every == 0 || step == cfg.steps {
            validate(policy, step, &mut report)?;
        }
    }
    if let Some((_, params)) = best {
        *policy.params_mut() = params;
    } else {
        report.best_step = cfg.steps;
    }
    Ok(report)
}
