//! Clipped-surrogate policy optimization with an optional KL penalty, where
//! one whole response is one action.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::{
    adamw_step, batch_grads, c, AdamWConfig, AdamWState, Grads, LrSchedule, NumError, Real,
};
use crate::policy::{Policy, PolicyError};
use crate::textdata::EncodedPair;

/// Reward spreads at or below this produce all-zero advantages.
pub const STD_GUARD: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PpoError {
    #[error("invalid ppo config: {0}")]
    InvalidConfig(String),
    #[error("empty rollout buffer")]
    EmptyBuffer,
    #[error("non-finite {what} for entry {entry} (new {new_log_prob}, old {old_log_prob})")]
    NonFinite {
        what: &'static str,
        entry: usize,
        new_log_prob: f64,
        old_log_prob: f64,
    },
    #[error("optimizer diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub buffer_size: usize,
    pub minibatch_size: usize,
    pub update_epochs: usize,
    /// Coefficient of the KL penalty; 0 leaves pure clipping.
    pub kl_coef: f64,
    pub entropy_coef: f64,
    pub baseline_momentum: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_epsilon: 0.2,
            buffer_size: 128,
            minibatch_size: 8,
            update_epochs: 4,
            kl_coef: 0.0,
            entropy_coef: 0.0,
            baseline_momentum: 0.9,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::InvalidConfig(m.into()));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if self.minibatch_size == 0 || self.buffer_size % self.minibatch_size != 0 {
            return bad("buffer_size must be a positive multiple of minibatch_size");
        }
        if self.update_epochs == 0 {
            return bad("update_epochs must be positive");
        }
        if !(self.kl_coef >= 0.0 && self.entropy_coef >= 0.0) {
            return bad("kl_coef and entropy_coef must be non-negative");
        }
        if !(0.0..1.0).contains(&self.baseline_momentum) {
            return bad("baseline_momentum must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub pair: EncodedPair,
    /// Sequence log-probability under the policy that produced or rescored it.
    pub old_log_prob: f64,
    pub reward: f64,
    pub advantage: f64,
    pub expert: bool,
}

impl BufferEntry {
    pub fn new(pair: EncodedPair, old_log_prob: f64, expert: bool) -> Self {
        BufferEntry {
            pair,
            old_log_prob,
            reward: 0.0,
            advantage: 0.0,
            expert,
        }
    }
}

/// Exponential moving average of batch-mean rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub value: f64,
    pub momentum: f64,
}

impl Baseline {
    pub fn new(momentum: f64) -> Self {
        Baseline {
            value: 0.0,
            momentum,
        }
    }

    pub fn update(&mut self, mean_reward: f64) {
        self.value = self.momentum * self.value + (1.0 - self.momentum) * mean_reward;
    }
}

/// Sets `advantage = reward - baseline`, then standardizes over the batch;
/// a spread at or below [`STD_GUARD`] carries no signal and yields zeros.
/// Finally folds the batch mean reward into the baseline.
pub fn compute_advantages(entries: &mut [BufferEntry], baseline: &mut Baseline) -> Result<(), PpoError> {
    if entries.is_empty() {
        return Err(PpoError::EmptyBuffer);
    }
    let n = entries.len() as f64;
    for e in entries.iter_mut() {
        e.advantage = e.reward - baseline.value;
    }
    let mean = entries.iter().map(|e| e.advantage).sum::<f64>() / n;
    let var = entries.iter().map(|e| (e.advantage - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for (i, e) in entries.iter_mut().enumerate() {
        e.advantage = if std > STD_GUARD {
            (e.advantage - mean) / std
        } else {
            0.0
        };
        if !e.advantage.is_finite() {
            return Err(PpoError::NonFinite {
                what: "advantage",
                entry: i,
                new_log_prob: f64::NAN,
                old_log_prob: e.old_log_prob,
            });
        }
    }
    let mean_reward = entries.iter().map(|e| e.reward).sum::<f64>() / n;
    baseline.update(mean_reward);
    Ok(())
}

/// Per-entry clipped surrogate `min(ρ·A, clip(ρ, 1-ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage)
}

#[derive(Debug, Clone)]
pub struct PpoObjective<T: Real> {
    pub value: f64,
    /// Gradient of `value` (ascent direction).
    pub grads: Grads<T>,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub mean_entropy: f64,
}

struct EntryStats {
    ratio: f64,
    kl: f64,
    entropy: f64,
    new_log_prob: f64,
}

/// `mean surrogate - C·mean max(old - new, 0) + β·mean per-token entropy`.
pub fn ppo_objective<T: Real>(
    policy: &Policy<T>,
    entries: &[&BufferEntry],
    cfg: &PpoConfig,
) -> Result<PpoObjective<T>, PpoError> {
    if entries.is_empty() {
        return Err(PpoError::EmptyBuffer);
    }
    let inv_n: T = c(1.0 / entries.len() as f64);
    let eps = cfg.clip_epsilon;
    let (outs, grads) = batch_grads(policy.params(), entries, |g, vars, e| {
        let (lp, logits) =
            policy.response_log_probs_tape(g, vars, &e.pair.state, &e.pair.target, None)?;
        let new_lp = g.sum(lp);
        let old: T = c(e.old_log_prob);
        let log_ratio = g.affine(new_lp, T::one(), -old);
        let ratio = g.exp(log_ratio);
        let adv: T = c(e.advantage);
        let unclipped = g.scale(ratio, adv);
        let clipped = g.clamp(ratio, c(1.0 - eps), c(1.0 + eps));
        let clipped = g.scale(clipped, adv);
        let mut obj = g.minimum(unclipped, clipped)?;

        let kl_raw = g.affine(new_lp, -T::one(), old);
        let kl = g.clamp(kl_raw, T::zero(), T::infinity());
        if cfg.kl_coef > 0.0 {
            let pen = g.scale(kl, c(-cfg.kl_coef));
            obj = g.add(obj, pen)?;
        }
        let ent = g.entropy(logits);
        let ent = g.mean(ent);
        if cfg.entropy_coef > 0.0 {
            let bonus = g.scale(ent, c(cfg.entropy_coef));
            obj = g.add(obj, bonus)?;
        }
        let out = g.scale(obj, inv_n);
        let stats = EntryStats {
            ratio: g.scalar(ratio).as_f64(),
            kl: g.scalar(kl).as_f64(),
            entropy: g.scalar(ent).as_f64(),
            new_log_prob: g.scalar(new_lp).as_f64(),
        };
        Ok::<_, PpoError>((out, stats))
    })?;

    let n = entries.len() as f64;
    let (mut value, mut ratio_sum, mut clipped, mut kl, mut ent) = (0.0, 0.0, 0usize, 0.0, 0.0);
    for (i, (v, s)) in outs.iter().enumerate() {
        if !s.ratio.is_finite() || !v.as_f64().is_finite() {
            return Err(PpoError::NonFinite {
                what: "ratio",
                entry: i,
                new_log_prob: s.new_log_prob,
                old_log_prob: entries[i].old_log_prob,
            });
        }
        value += v.as_f64();
        ratio_sum += s.ratio;
        if (s.ratio - 1.0).abs() > eps {
            clipped += 1;
        }
        kl += s.kl;
        ent += s.entropy;
    }
    Ok(PpoObjective {
        value,
        grads,
        mean_ratio: ratio_sum / n,
        clip_fraction: clipped as f64 / n,
        approx_kl: kl / n,
        mean_entropy: ent / n,
    })
}

/// AdamW whose learning rate follows a warmup-linear schedule over optimizer steps.
#[derive(Debug, Clone, PartialEq)]
pub struct GenOptimizer<T: Real> {
    pub adam: AdamWState<T>,
    pub schedule: LrSchedule,
}

impl<T: Real> GenOptimizer<T> {
    pub fn new(policy: &Policy<T>, weight_decay: f64, schedule: LrSchedule) -> Self {
        GenOptimizer {
            adam: AdamWState::new(policy.params(), AdamWConfig::new(schedule.base_rate, weight_decay)),
            schedule,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub mean_entropy: f64,
    pub mean_objective: f64,
    pub minibatches: usize,
}

/// Runs `update_epochs` passes over the buffer in minibatches, shuffled by
/// `seed`, ascending [`ppo_objective`]. Statistics average over minibatches.
pub fn ppo_update<T: Real>(
    policy: &mut Policy<T>,
    entries: &[BufferEntry],
    cfg: &PpoConfig,
    opt: &mut GenOptimizer<T>,
    seed: u64,
) -> Result<PpoStats, PpoError> {
    cfg.validate()?;
    if entries.is_empty() {
        return Err(PpoError::EmptyBuffer);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..entries.len()).collect();
    let mut stats = PpoStats::default();
    for _ in 0..cfg.update_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let batch: Vec<&BufferEntry> = chunk.iter().map(|&i| &entries[i]).collect();
            let mut obj = ppo_objective(policy, &batch, cfg)?;
            stats.mean_ratio += obj.mean_ratio;
            stats.clip_fraction += obj.clip_fraction;
            stats.approx_kl += obj.approx_kl;
            stats.mean_entropy += obj.mean_entropy;
            stats.mean_objective += obj.value;
            stats.minibatches += 1;

            opt.adam.lr = opt.schedule.lr_at(opt.adam.step);
            obj.grads.scale(-T::one());
            adamw_step(policy.params_mut(), &obj.grads, &mut opt.adam)
                .map_err(|e| PpoError::Diverged(e.to_string()))?;
            if !policy.params().is_finite() {
                return Err(PpoError::Diverged(format!(
                    "non-finite parameters after optimizer step {}",
                    opt.adam.step
                )));
            }
        }
    }
    let m = stats.minibatches as f64;
    stats.mean_ratio /= m;
    stats.clip_fraction /= m;
    stats.approx_kl /= m;
    stats.mean_entropy /= m;
    stats.mean_objective /= m;
    Ok(stats)
}
