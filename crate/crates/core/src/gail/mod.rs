//! Adversarial imitation training: discriminator pretraining, alternating
//! discriminator and PPO updates with demo mixing, validation, checkpoints, and
//! an exactly enumerable occupancy-matching experiment.

mod checkpoint;
mod config;
mod metrics;
mod occupancy;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discriminator::{disc_optimizer, DiscConfig, DiscError, Discriminator};
use crate::eval::EvalError;
use crate::numcore::{AdamWConfig, AdamWState, LrSchedule, NumError, Real};
use crate::policy::{Policy, PolicyConfig, PolicyError};
use crate::ppo::{Baseline, GenOptimizer, PpoError};
use crate::textdata::DataError;

pub use checkpoint::{checkpoint_precision, Checkpoint, CheckpointConfig, FORMAT_VERSION, MAGIC};
pub use config::{demo_ratio_at, encode_limits, TrainConfig};
pub use metrics::{read_records, MetricsRecord, MetricsWriter, StepMetrics, ValidationRecord};
pub use occupancy::{
    enumerate_responses, occupancy_of_policy, tabular_occupancy_experiment, OccupancyReport,
    OccupancySpec, OccupancyTable, ENUMERATION_LIMIT,
};
pub use trainer::{
    gail_step, BEST, LATEST, METRICS, MLE, pretrain_discriminator, train, validation_scores, TrainData, TrainOptions,
    TrainOutcome, ValidationScores,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GailError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("corrupted checkpoint: {0}")]
    Corrupt(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("enumeration needs {count} sequences, limit is {limit}")]
    TooLarge { count: u64, limit: u64 },
    #[error("step {step} failed ({message}); resumable snapshot at {snapshot}")]
    StepFailed {
        step: u64,
        snapshot: String,
        message: String,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Disc(#[from] DiscError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Everything that training mutates besides [`TrainState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Models<T: Real> {
    pub policy: Policy<T>,
    pub disc: Discriminator<T>,
    pub gen_opt: GenOptimizer<T>,
    pub disc_opt: AdamWState<T>,
}

/// Discriminator shape matching a policy: same vocabulary, embedding width and
/// length caps.
pub fn disc_config_for(policy: &PolicyConfig, cfg: &TrainConfig) -> DiscConfig {
    DiscConfig {
        vocab_size: policy.vocab_size,
        embed_dim: policy.embed_dim,
        hidden: cfg.disc_hidden,
        max_state: policy.max_state(),
        max_response: policy.max_response,
    }
}

const DISC_SEED_SALT: u64 = 0xD15C_0000_0000_0001;

impl<T: Real> Models<T> {
    /// Fresh models. `optimizer_steps` is the length of the generator schedule.
    pub fn new(
        cfg: &TrainConfig,
        policy_cfg: PolicyConfig,
        optimizer_steps: u64,
    ) -> Result<Self, GailError> {
        let policy = Policy::new(policy_cfg, cfg.seed)?;
        let disc = Discriminator::new(disc_config_for(&policy_cfg, cfg), cfg.seed ^ DISC_SEED_SALT)?;
        Ok(Self::from_parts(cfg, policy, disc, optimizer_steps))
    }

    /// Wraps existing networks with fresh optimizer state.
    pub fn from_parts(
        cfg: &TrainConfig,
        policy: Policy<T>,
        disc: Discriminator<T>,
        optimizer_steps: u64,
    ) -> Self {
        let schedule = LrSchedule::new(cfg.generator_lr, cfg.generator_warmup_steps, optimizer_steps);
        let gen_opt = GenOptimizer::new(&policy, cfg.generator_weight_decay, schedule);
        let disc_opt = disc_optimizer(&disc, AdamWConfig::new(cfg.disc_lr, cfg.disc_weight_decay));
        Models {
            policy,
            disc,
            gen_opt,
            disc_opt,
        }
    }
}

/// Loop position and the scalars carried between steps. Per-step random
/// streams are derived from `seed` and `global_step`, so no generator state
/// needs saving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    pub global_step: u64,
    pub epoch: u64,
    pub demo_ratio: f64,
    pub initial_val_perplexity: Option<f64>,
    pub best_val_perplexity: Option<f64>,
    pub best_step: Option<u64>,
    pub baseline: Baseline,
    pub seed: u64,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        TrainState {
            global_step: 0,
            epoch: 0,
            demo_ratio: cfg.human_demo_ratio,
            initial_val_perplexity: None,
            best_val_perplexity: None,
            best_step: None,
            baseline: Baseline::new(cfg.ppo.baseline_momentum),
            seed: cfg.seed,
        }
    }
}

#[cfg(test)]
mod tests;
