use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::discriminator::{disc_update, reward_from_score};
use crate::eval::{bleu, perplexity_from_log_probs};
use crate::numcore::Real;
use crate::policy::{mle_pretrain, sample_response, MleConfig, Policy, PolicyConfig};
use crate::ppo::{compute_advantages, ppo_update, BufferEntry};
use crate::textdata::{encode, EncodeLimits, EncodedPair, Trajectory, Vocab, EOS};

use super::checkpoint::{Checkpoint, CheckpointConfig};
use super::config::{demo_ratio_at, encode_limits, TrainConfig};
use super::metrics::{MetricsRecord, MetricsWriter, StepMetrics, ValidationRecord};
use super::{disc_config_for, GailError, Models, TrainState};

const ROLLOUT: u64 = 1;
const PPO_SHUFFLE: u64 = 2;
const DISC_PRETRAIN: u64 = 3;

/// Independent stream per `(seed, step, purpose)`.
fn step_rng(seed: u64, step: u64, purpose: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    r.set_stream(step);
    r
}

/// Samples one response per `(expert index, z)` from that expert's state.
fn sample_pairs<T: Real>(
    policy: &Policy<T>,
    expert: &[EncodedPair],
    picks: &[(usize, u64)],
    temperature: f64,
    group: usize,
) -> Result<Vec<(EncodedPair, f64)>, GailError> {
    let groups: Vec<Result<Vec<(EncodedPair, f64)>, GailError>> = picks
        .par_chunks(group.max(1))
        .map(|chunk| {
            chunk
                .iter()
                .map(|&(i, z)| {
                    let g = sample_response(policy, &expert[i].state, z, temperature)?;
                    let lp = g.total_log_prob();
                    Ok((
                        EncodedPair {
                            state: g.state,
                            target: g.response,
                        },
                        lp,
                    ))
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(picks.len());
    for g in groups {
        out.extend(g?);
    }
    Ok(out)
}

fn random_picks(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<(usize, u64)> {
    (0..count).map(|_| (rng.gen_range(0..n), rng.gen())).collect()
}

fn random_expert_batch(rng: &mut ChaCha8Rng, expert: &[EncodedPair], count: usize) -> Vec<EncodedPair> {
    (0..count)
        .map(|_| expert[rng.gen_range(0..expert.len())].clone())
        .collect()
}

/// `steps` discriminator updates on fresh policy samples against random
/// expert pairs. Returns the objective before each update.
pub fn pretrain_discriminator<T: Real>(
    models: &mut Models<T>,
    expert: &[EncodedPair],
    cfg: &TrainConfig,
    steps: u64,
) -> Result<Vec<f64>, GailError> {
    if expert.is_empty() {
        return Err(GailError::InvalidConfig("empty expert set".into()));
    }
    let mut objectives = Vec::with_capacity(steps as usize);
    for s in 0..steps {
        let mut rng = step_rng(cfg.seed, s, DISC_PRETRAIN);
        let picks = random_picks(&mut rng, expert.len(), cfg.batch_size);
        let generated: Vec<EncodedPair> = sample_pairs(
            &models.policy,
            expert,
            &picks,
            cfg.temperature,
            cfg.sample_batch_size,
        )?
        .into_iter()
        .map(|(p, _)| p)
        .collect();
        let exp = random_expert_batch(&mut rng, expert, cfg.batch_size);
        objectives.push(disc_update(&mut models.disc, &mut models.disc_opt, &generated, &exp)?);
    }
    Ok(objectives)
}

/// One adversarial iteration: fill the buffer, score it, one discriminator
/// update, then one PPO update. Advances `state.global_step` on success. A
/// failure may leave `models` partly updated; callers snapshot beforehand.
pub fn gail_step<T: Real>(
    models: &mut Models<T>,
    state: &mut TrainState,
    expert: &[EncodedPair],
    cfg: &TrainConfig,
    total_steps: u64,
) -> Result<StepMetrics, GailError> {
    if expert.is_empty() {
        return Err(GailError::InvalidConfig("empty expert set".into()));
    }
    let step = state.global_step;
    let ratio = demo_ratio_at(cfg, step, total_steps);
    let mut rng = step_rng(state.seed, step, ROLLOUT);

    // Phase 1: rollout buffer. Slot plans are drawn sequentially so the buffer
    // does not depend on how sampling is parallelized.
    let n = cfg.ppo.buffer_size;
    let mut expert_slots = Vec::new();
    let mut gen_slots = Vec::new();
    let mut gen_picks = Vec::new();
    for slot in 0..n {
        let is_expert = rng.gen::<f64>() < ratio;
        let idx = rng.gen_range(0..expert.len());
        let z: u64 = rng.gen();
        if is_expert {
            expert_slots.push((slot, idx));
        } else {
            gen_slots.push(slot);
            gen_picks.push((idx, z));
        }
    }
    let policy = &models.policy;
    let rescored: Vec<Result<f64, GailError>> = expert_slots
        .par_iter()
        .map(|&(_, i)| {
            let (lp, _) = policy.sequence_log_prob(&expert[i].state, &expert[i].target)?;
            Ok(lp.as_f64())
        })
        .collect();
    let sampled = sample_pairs(policy, expert, &gen_picks, cfg.temperature, cfg.sample_batch_size)?;

    let mut slots: Vec<Option<BufferEntry>> = vec![None; n];
    for (&(slot, i), lp) in expert_slots.iter().zip(rescored) {
        slots[slot] = Some(BufferEntry::new(expert[i].clone(), lp?, true));
    }
    for (&slot, (pair, lp)) in gen_slots.iter().zip(sampled) {
        slots[slot] = Some(BufferEntry::new(pair, lp, false));
    }
    let mut entries: Vec<BufferEntry> = slots.into_iter().map(|e| e.expect("slot filled")).collect();

    // Phase 2: rewards from the pre-update discriminator.
    let pairs: Vec<EncodedPair> = entries.iter().map(|e| e.pair.clone()).collect();
    let scores = models.disc.score_all(&pairs)?;
    for (e, d) in entries.iter_mut().zip(&scores) {
        e.reward = reward_from_score(*d);
    }
    let mean_reward = entries.iter().map(|e| e.reward).sum::<f64>() / n as f64;

    // Phase 3: one discriminator update, topping up generated pairs if the
    // buffer holds fewer than a batch.
    let b = cfg.batch_size;
    let mut generated: Vec<EncodedPair> = {
        let gens: Vec<&BufferEntry> = entries.iter().filter(|e| !e.expert).collect();
        if gens.len() > b {
            index::sample(&mut rng, gens.len(), b)
                .into_iter()
                .map(|i| gens[i].pair.clone())
                .collect()
        } else {
            gens.iter().map(|e| e.pair.clone()).collect()
        }
    };
    if generated.len() < b {
        let extra = random_picks(&mut rng, expert.len(), b - generated.len());
        let more = sample_pairs(&models.policy, expert, &extra, cfg.temperature, cfg.sample_batch_size)?;
        generated.extend(more.into_iter().map(|(p, _)| p));
    }
    let exp_batch = random_expert_batch(&mut rng, expert, b);
    let disc_objective = disc_update(&mut models.disc, &mut models.disc_opt, &generated, &exp_batch)?;

    // Phase 4: advantages, then the policy update.
    compute_advantages(&mut entries, &mut state.baseline)?;
    let ppo_seed: u64 = step_rng(state.seed, step, PPO_SHUFFLE).gen();
    let stats = ppo_update(&mut models.policy, &entries, &cfg.ppo, &mut models.gen_opt, ppo_seed)?;

    state.global_step += 1;
    state.demo_ratio = ratio;
    let expert_entries = entries.iter().filter(|e| e.expert).count();
    Ok(StepMetrics {
        step: state.global_step,
        epoch: state.epoch,
        demo_ratio: ratio,
        expert_entries,
        generated_entries: n - expert_entries,
        disc_objective,
        mean_reward,
        baseline: state.baseline.value,
        clip_fraction: stats.clip_fraction,
        approx_kl: stats.approx_kl,
        mean_ratio: stats.mean_ratio,
        mean_entropy: stats.mean_entropy,
        lr: models.gen_opt.adam.lr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationScores {
    pub perplexity: f64,
    pub bleu: f64,
    pub clamped_tokens: usize,
}

/// Teacher-forced perplexity over all targets and corpus BLEU of one sampled
/// response per trajectory, with sample streams seeded from `seed`.
pub fn validation_scores<T: Real>(
    policy: &Policy<T>,
    vocab: &Vocab,
    limits: EncodeLimits,
    trajectories: &[Trajectory],
    seed: u64,
    temperature: f64,
) -> Result<ValidationScores, GailError> {
    if trajectories.is_empty() {
        return Err(GailError::InvalidConfig("empty validation set".into()));
    }
    let pairs: Vec<EncodedPair> = trajectories.iter().map(|t| encode(t, vocab, limits)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zs: Vec<u64> = pairs.iter().map(|_| rng.gen()).collect();
    let per: Vec<Result<(Vec<f64>, Vec<usize>), GailError>> = pairs
        .par_iter()
        .zip(&zs)
        .map(|(p, &z)| {
            let (_, lps) = policy.sequence_log_prob(&p.state, &p.target)?;
            let mut g = sample_response(policy, &p.state, z, temperature)?.response;
            if g.last() == Some(&EOS) {
                g.pop();
            }
            Ok((lps.iter().map(|l| l.as_f64()).collect(), g))
        })
        .collect();
    let mut lps = Vec::new();
    let mut cands = Vec::with_capacity(pairs.len());
    for r in per {
        let (l, g) = r?;
        lps.extend(l);
        cands.push(g);
    }
    let refs: Vec<Vec<usize>> = pairs
        .iter()
        .map(|p| {
            let mut t = p.target.clone();
            if t.last() == Some(&EOS) {
                t.pop();
            }
            t
        })
        .collect();
    let ppl = perplexity_from_log_probs(&lps)?;
    Ok(ValidationScores {
        perplexity: ppl.value,
        bleu: bleu(&cands, &refs)?,
        clamped_tokens: ppl.clamped,
    })
}

/// Prepared splits with their vocabulary.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub vocab: Vocab,
    pub train: Vec<Trajectory>,
    pub validation: Vec<Trajectory>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub out_dir: PathBuf,
    /// Continue from this checkpoint, truncating later metrics records.
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub latest: PathBuf,
    pub best: PathBuf,
    /// Teacher-forced-only checkpoint, when pretraining ran.
    pub mle: Option<PathBuf>,
    pub metrics: PathBuf,
    pub state: TrainState,
}

pub const LATEST: &str = "latest.egail";
pub const BEST: &str = "best.egail";
pub const MLE: &str = "mle.egail";
pub const METRICS: &str = "metrics.jsonl";

struct Run<'a, T: Real> {
    cfg: &'a TrainConfig,
    ckpt_config: CheckpointConfig,
    vocab: &'a Vocab,
    limits: EncodeLimits,
    validation: &'a [Trajectory],
    out_dir: &'a Path,
    metrics: MetricsWriter,
    _t: std::marker::PhantomData<T>,
}

impl<T: Real> Run<'_, T> {
    fn save(&self, name: &str, models: &Models<T>, state: &TrainState) -> Result<PathBuf, GailError> {
        let path = self.out_dir.join(name);
        let ck = Checkpoint {
            config: self.ckpt_config.clone(),
            vocab: self.vocab.clone(),
            state: state.clone(),
            models: models.clone(),
        };
        ck.save(&path)?;
        Ok(path)
    }

    /// Records a validation and refreshes the best checkpoint when perplexity improves.
    fn validate(&mut self, models: &Models<T>, state: &mut TrainState) -> Result<(), GailError> {
        let s = validation_scores(
            &models.policy,
            self.vocab,
            self.limits,
            self.validation,
            self.cfg.seed,
            self.cfg.temperature,
        )?;
        let best = state.best_val_perplexity.is_none_or(|b| s.perplexity < b);
        if state.initial_val_perplexity.is_none() {
            state.initial_val_perplexity = Some(s.perplexity);
        }
        if best {
            state.best_val_perplexity = Some(s.perplexity);
            state.best_step = Some(state.global_step);
        }
        log::info!(
            "validation at step {}: perplexity {:.4}, bleu {:.2}{}",
            state.global_step,
            s.perplexity,
            s.bleu,
            if best { " (best)" } else { "" }
        );
        self.metrics.write(&MetricsRecord::Validation(ValidationRecord {
            step: state.global_step,
            epoch: state.epoch,
            perplexity: s.perplexity,
            bleu: s.bleu,
            clamped_tokens: s.clamped_tokens,
            best,
        }))?;
        if best {
            self.save(BEST, models, state)?;
        }
        Ok(())
    }
}

/// Full training run writing `latest.egail`, `best.egail`, `metrics.jsonl`
/// and, with teacher-forced pretraining, `mle.egail` into the output directory.
pub fn train<T: Real>(
    cfg: &TrainConfig,
    policy_cfg: PolicyConfig,
    data: &TrainData,
    opts: &TrainOptions,
) -> Result<TrainOutcome, GailError> {
    cfg.validate()?;
    policy_cfg.validate()?;
    if policy_cfg.vocab_size != data.vocab.len() {
        return Err(GailError::InvalidConfig(format!(
            "policy vocab_size {} differs from vocabulary size {}",
            policy_cfg.vocab_size,
            data.vocab.len()
        )));
    }
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(GailError::InvalidConfig("train and validation splits must be non-empty".into()));
    }
    fs::create_dir_all(&opts.out_dir)
        .map_err(|e| GailError::Io(format!("{}: {e}", opts.out_dir.display())))?;
    let limits = encode_limits(&policy_cfg);
    let train_pairs: Vec<EncodedPair> = data.train.iter().map(|t| encode(t, &data.vocab, limits)).collect();
    let steps_per_epoch = cfg.steps_per_epoch(train_pairs.len());
    let total_steps = cfg.total_steps(train_pairs.len());
    let val_every = steps_per_epoch * cfg.validation_frequency;
    let ckpt_config = CheckpointConfig {
        train: cfg.clone(),
        policy: policy_cfg,
        disc: disc_config_for(&policy_cfg, cfg),
        vocab_hash: data.vocab.hash(),
    };
    let metrics_path = opts.out_dir.join(METRICS);
    let mle_path = (cfg.mle_steps > 0).then(|| opts.out_dir.join(MLE));

    let (mut models, mut state, metrics) = match &opts.resume {
        Some(path) => {
            let ck = Checkpoint::<T>::load(path)?;
            if ck.config != ckpt_config {
                return Err(GailError::InvalidConfig(format!(
                    "checkpoint {} was written with a different configuration",
                    path.display()
                )));
            }
            let w = MetricsWriter::resume(&metrics_path, ck.state.global_step)?;
            log::info!("resuming from {} at step {}", path.display(), ck.state.global_step);
            (ck.models, ck.state, w)
        }
        None => {
            let mut w = MetricsWriter::create(&metrics_path)?;
            w.write(&MetricsRecord::Config {
                step: 0,
                config: ckpt_config.clone(),
            })?;
            let optimizer_steps = cfg.total_optimizer_steps(train_pairs.len());
            (Models::<T>::new(cfg, policy_cfg, optimizer_steps)?, TrainState::new(cfg), w)
        }
    };
    let mut run = Run::<T> {
        cfg,
        ckpt_config,
        vocab: &data.vocab,
        limits,
        validation: &data.validation,
        out_dir: &opts.out_dir,
        metrics,
        _t: std::marker::PhantomData,
    };

    if opts.resume.is_none() {
        if mle_path.is_some() {
            let val_pairs: Vec<EncodedPair> =
                data.validation.iter().map(|t| encode(t, &data.vocab, limits)).collect();
            let mle_cfg = MleConfig {
                steps: cfg.mle_steps,
                batch_size: cfg.batch_size,
                lr: cfg.mle_lr,
                weight_decay: cfg.generator_weight_decay,
                validation_frequency: cfg.validation_frequency,
                seed: cfg.seed,
            };
            let report = mle_pretrain(&mut models.policy, &train_pairs, &val_pairs, &mle_cfg)?;
            // The adversarial phase starts with fresh generator moments.
            models = Models::from_parts(
                cfg,
                models.policy,
                models.disc,
                models.gen_opt.schedule.total_steps,
            );
            run.metrics.write(&MetricsRecord::Mle {
                step: 0,
                steps: cfg.mle_steps,
                best_step: report.best_step,
                final_train_loss: report.train_losses.last().copied().unwrap_or(f64::NAN),
                validation: report.validation,
            })?;
            run.save(MLE, &models, &state)?;
        }
        let objectives = pretrain_discriminator(&mut models, &train_pairs, cfg, cfg.disc_pretrain_steps)?;
        run.metrics.write(&MetricsRecord::DiscPretrain {
            step: 0,
            steps: cfg.disc_pretrain_steps,
            first_objective: objectives.first().copied(),
            last_objective: objectives.last().copied(),
        })?;
        run.validate(&models, &mut state)?;
        run.save(LATEST, &models, &state)?;
    }

    while state.global_step < total_steps {
        state.epoch = state.global_step / steps_per_epoch;
        let before = (models.clone(), state.clone());
        let m = match gail_step(&mut models, &mut state, &train_pairs, cfg, total_steps) {
            Ok(m) => m,
            Err(e) => {
                let step = before.1.global_step;
                let name = format!("failed_step_{step}.egail");
                let snapshot = run.save(&name, &before.0, &before.1)?;
                return Err(GailError::StepFailed {
                    step,
                    snapshot: snapshot.display().to_string(),
                    message: e.to_string(),
                });
            }
        };
        log::debug!(
            "step {}: disc {:.4}, reward {:.4}, clip {:.3}, kl {:.5}",
            m.step,
            m.disc_objective,
            m.mean_reward,
            m.clip_fraction,
            m.approx_kl
        );
        run.metrics.write(&MetricsRecord::Step(m))?;
        let step = state.global_step;
        state.epoch = step / steps_per_epoch;
        if step % val_every == 0 || step == total_steps {
            run.validate(&models, &mut state)?;
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            run.save(&format!("step_{step}.egail"), &models, &state)?;
        }
        run.save(LATEST, &models, &state)?;
    }
    Ok(TrainOutcome {
        latest: opts.out_dir.join(LATEST),
        best: opts.out_dir.join(BEST),
        mle: mle_path,
        metrics: metrics_path,
        state,
    })
}
