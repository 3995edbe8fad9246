use serde::{Deserialize, Serialize};

use crate::policy::PolicyConfig;
use crate::ppo::PpoConfig;
use crate::textdata::EncodeLimits;

use super::GailError;

/// Adversarial training hyperparameters. Defaults are the full-scale values;
/// desk runs override epochs and model size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Generated responses are drawn in parallel groups of this size.
    pub sample_batch_size: usize,
    pub generator_lr: f64,
    pub generator_weight_decay: f64,
    /// Optimizer steps of linear warmup for the generator learning rate.
    pub generator_warmup_steps: u64,
    pub human_demo_ratio: f64,
    /// Steps during which the demo ratio is held at its initial value.
    pub human_demo_ratio_warmup_steps: u64,
    pub demo_ratio_floor: f64,
    pub ppo: PpoConfig,
    pub disc_pretrain_steps: u64,
    pub disc_lr: f64,
    pub disc_weight_decay: f64,
    pub disc_hidden: usize,
    pub epochs: u64,
    /// Discriminator batch size per class, and MLE batch size.
    pub batch_size: usize,
    /// Validation cadence in epochs.
    pub validation_frequency: u64,
    pub temperature: f64,
    /// Teacher-forced pretraining steps run before adversarial training.
    pub mle_steps: u64,
    pub mle_lr: f64,
    /// Extra step-numbered checkpoints every this many steps; 0 disables them.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            sample_batch_size: 16,
            generator_lr: 1e-4,
            generator_weight_decay: 0.01,
            generator_warmup_steps: 1000,
            human_demo_ratio: 0.3,
            human_demo_ratio_warmup_steps: 100,
            demo_ratio_floor: 0.0,
            ppo: PpoConfig::default(),
            disc_pretrain_steps: 200,
            disc_lr: 1e-4,
            disc_weight_decay: 0.01,
            disc_hidden: 100,
            epochs: 750,
            batch_size: 32,
            validation_frequency: 10,
            temperature: 1.0,
            mle_steps: 0,
            mle_lr: 1e-3,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GailError> {
        let bad = |m: &str| Err(GailError::InvalidConfig(m.into()));
        self.ppo.validate()?;
        if self.sample_batch_size == 0 || self.batch_size == 0 || self.disc_hidden == 0 {
            return bad("batch sizes and disc_hidden must be positive");
        }
        if !(0.0..=1.0).contains(&self.human_demo_ratio)
            || !(0.0..=self.human_demo_ratio).contains(&self.demo_ratio_floor)
        {
            return bad("need 0 <= demo_ratio_floor <= human_demo_ratio <= 1");
        }
        if !(self.generator_lr >= 0.0 && self.disc_lr >= 0.0 && self.mle_lr >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if self.validation_frequency == 0 {
            return bad("validation_frequency must be positive");
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, train_len: usize) -> u64 {
        train_len.div_ceil(self.ppo.buffer_size).max(1) as u64
    }

    pub fn total_steps(&self, train_len: usize) -> u64 {
        self.epochs * self.steps_per_epoch(train_len)
    }

    /// Generator optimizer steps over the whole run.
    pub fn total_optimizer_steps(&self, train_len: usize) -> u64 {
        let per_step = self.ppo.update_epochs * self.ppo.buffer_size.div_ceil(self.ppo.minibatch_size);
        self.total_steps(train_len) * per_step as u64
    }
}

/// Length caps implied by a policy configuration.
pub fn encode_limits(policy: &PolicyConfig) -> EncodeLimits {
    EncodeLimits {
        max_state: policy.max_state(),
        max_response: policy.max_response,
    }
}

/// Held at the initial ratio through the warmup steps, then linear down to the
/// floor at `total_steps`.
pub fn demo_ratio_at(cfg: &TrainConfig, step: u64, total_steps: u64) -> f64 {
    let start = cfg.human_demo_ratio;
    let hold = cfg.human_demo_ratio_warmup_steps;
    if step < hold || total_steps <= hold {
        return start;
    }
    if step >= total_steps {
        return cfg.demo_ratio_floor;
    }
    let frac = (step - hold) as f64 / (total_steps - hold) as f64;
    start + (cfg.demo_ratio_floor - start) * frac
}
