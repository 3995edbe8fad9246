//! Occupancy matching on a finite space where every response sequence can be
//! enumerated, so the state-action distribution of a policy is exact.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::numcore::{kernels, Real};
use crate::policy::{mle_pretrain, Decoder, MleConfig, Policy, PolicyConfig};
use crate::textdata::{EncodedPair, EOS};

use super::metrics::StepMetrics;
use super::trainer::{gail_step, pretrain_discriminator};
use super::{GailError, Models, TrainConfig, TrainState};

/// Enumeration refuses spaces with more response sequences than this.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

/// Probability mass over `(state id, response)` pairs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OccupancyTable {
    masses: BTreeMap<(usize, Vec<usize>), f64>,
}

impl OccupancyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, state: usize, response: Vec<usize>, mass: f64) {
        *self.masses.entry((state, response)).or_insert(0.0) += mass;
    }

    pub fn mass(&self, state: usize, response: &[usize]) -> f64 {
        self.masses
            .get(&(state, response.to_vec()))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.masses.values().sum()
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, Vec<usize>), &f64)> {
        self.masses.iter()
    }

    /// `½ Σ |p − q|` over the union of supports.
    pub fn tv_distance(&self, other: &OccupancyTable) -> f64 {
        let mut sum = 0.0;
        for (k, &p) in &self.masses {
            sum += (p - other.masses.get(k).copied().unwrap_or(0.0)).abs();
        }
        for (k, &q) in &other.masses {
            if !self.masses.contains_key(k) {
                sum += q.abs();
            }
        }
        0.5 * sum
    }
}

/// Number of responses reachable from a state: EOS-terminated sequences of
/// every length up to `cap`, plus unterminated ones of exactly `cap` tokens.
fn response_count(vocab: usize, cap: usize) -> u64 {
    let branch = vocab as u64 - 1;
    let mut total = 0u64;
    let mut level = 1u64;
    for _ in 0..cap {
        total = total.saturating_add(level);
        level = level.saturating_mul(branch);
    }
    total.saturating_add(level)
}

fn response_cap(cfg: &PolicyConfig, state_len: usize) -> usize {
    cfg.max_response.min(cfg.max_context + 1 - state_len)
}

/// Every response the policy can emit from `state` with its exact probability.
pub fn enumerate_responses<T: Real>(
    policy: &Policy<T>,
    state: &[usize],
) -> Result<Vec<(Vec<usize>, f64)>, GailError> {
    let cfg = policy.config();
    let cap = response_cap(cfg, state.len());
    let count = response_count(cfg.vocab_size, cap);
    if count > ENUMERATION_LIMIT {
        return Err(GailError::TooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut dec = policy.decoder();
    let logits = policy.prefill(&mut dec, state)?;
    let mut out = Vec::with_capacity(count as usize);
    let mut prefix = Vec::with_capacity(cap);
    walk(policy, dec, &logits, &mut prefix, 0.0, cap, &mut out)?;
    Ok(out)
}

fn walk<T: Real>(
    policy: &Policy<T>,
    dec: Decoder<T>,
    logits: &[T],
    prefix: &mut Vec<usize>,
    log_mass: f64,
    cap: usize,
    out: &mut Vec<(Vec<usize>, f64)>,
) -> Result<(), GailError> {
    let lsm = kernels::log_softmax(logits);
    for (tok, lp) in lsm.iter().enumerate() {
        let lm = log_mass + lp.as_f64();
        prefix.push(tok);
        if tok == EOS || prefix.len() == cap {
            out.push((prefix.clone(), lm.exp()));
        } else {
            let mut next = dec.clone();
            let l = policy.step(&mut next, tok)?;
            walk(policy, next, &l, prefix, lm, cap, out)?;
        }
        prefix.pop();
    }
    Ok(())
}

/// Exact occupancy of `policy` with states weighted uniformly.
pub fn occupancy_of_policy<T: Real>(
    policy: &Policy<T>,
    states: &[Vec<usize>],
) -> Result<OccupancyTable, GailError> {
    let cfg = policy.config();
    let total: u64 = states
        .iter()
        .map(|s| response_count(cfg.vocab_size, response_cap(cfg, s.len())))
        .fold(0u64, |a, b| a.saturating_add(b));
    if total > ENUMERATION_LIMIT {
        return Err(GailError::TooLarge {
            count: total,
            limit: ENUMERATION_LIMIT,
        });
    }
    let w = 1.0 / states.len() as f64;
    let mut table = OccupancyTable::new();
    for (i, s) in states.iter().enumerate() {
        for (r, p) in enumerate_responses(policy, s)? {
            table.add(i, r, w * p);
        }
    }
    Ok(table)
}

/// Finite imitation problem. The expert is a table of
/// `(state id, response, integer weight)` whose weights sum to the same total
/// for every state, so states are visited uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancySpec {
    pub states: Vec<Vec<usize>>,
    pub expert: Vec<(usize, Vec<usize>, u32)>,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    /// Upper bound on adversarial steps.
    pub max_steps: u64,
    /// TV distance is recorded every this many steps.
    pub eval_every: u64,
    /// Stop once TV falls to this fraction of its initial value.
    pub stop_fraction: Option<f64>,
    /// Teacher-forced pretraining on the expert pairs before the first measurement.
    pub mle_init: Option<MleConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyReport {
    pub initial_tv: f64,
    pub final_tv: f64,
    /// `(steps completed, TV distance)`, starting at step 0.
    pub curve: Vec<(u64, f64)>,
    pub steps: u64,
    pub history: Vec<StepMetrics>,
    pub expert: OccupancyTable,
    pub final_occupancy: OccupancyTable,
}

impl OccupancySpec {
    fn expert_table(&self) -> Result<(OccupancyTable, Vec<EncodedPair>), GailError> {
        let bad = |m: String| Err(GailError::InvalidConfig(m));
        if self.states.is_empty() || self.expert.is_empty() {
            return bad("occupancy spec needs states and expert entries".into());
        }
        let mut per_state = vec![0u64; self.states.len()];
        for (s, r, w) in &self.expert {
            if *s >= self.states.len() {
                return bad(format!("expert entry refers to unknown state {s}"));
            }
            let cap = response_cap(&self.policy, self.states[*s].len());
            let ends = r.last() == Some(&EOS) || r.len() == cap;
            if r.is_empty() || r.len() > cap || !ends || r[..r.len() - 1].contains(&EOS) {
                return bad(format!("expert response {r:?} is not a reachable sequence"));
            }
            per_state[*s] += *w as u64;
        }
        if per_state.iter().any(|&w| w != per_state[0] || w == 0) {
            return bad("expert weights must sum to the same positive total per state".into());
        }
        let norm = 1.0 / (self.states.len() as f64 * per_state[0] as f64);
        let mut table = OccupancyTable::new();
        let mut pairs = Vec::new();
        for (s, r, w) in &self.expert {
            table.add(*s, r.clone(), *w as f64 * norm);
            for _ in 0..*w {
                pairs.push(EncodedPair {
                    state: self.states[*s].clone(),
                    target: r.clone(),
                });
            }
        }
        Ok((table, pairs))
    }
}

/// Runs the adversarial loop with the real policy, discriminator and PPO
/// update on the expert pairs and measures exact TV distance to the expert.
pub fn tabular_occupancy_experiment<T: Real>(spec: &OccupancySpec) -> Result<OccupancyReport, GailError> {
    spec.train.validate()?;
    spec.policy.validate()?;
    let (expert, pairs) = spec.expert_table()?;
    let per_step = spec.train.ppo.update_epochs
        * spec.train.ppo.buffer_size.div_ceil(spec.train.ppo.minibatch_size);
    let optimizer_steps = spec.max_steps * per_step as u64;
    let mut models = Models::<T>::new(&spec.train, spec.policy, optimizer_steps)?;
    if let Some(mle) = &spec.mle_init {
        mle_pretrain(&mut models.policy, &pairs, &[], mle)?;
    }
    pretrain_discriminator(&mut models, &pairs, &spec.train, spec.train.disc_pretrain_steps)?;
    let mut state = TrainState::new(&spec.train);
    let initial = occupancy_of_policy(&models.policy, &spec.states)?.tv_distance(&expert);
    let mut curve = vec![(0, initial)];
    let every = spec.eval_every.max(1);
    let mut last = initial;
    let mut history = Vec::new();
    while state.global_step < spec.max_steps {
        history.push(gail_step(&mut models, &mut state, &pairs, &spec.train, spec.max_steps)?);
        let step = state.global_step;
        if step % every == 0 || step == spec.max_steps {
            last = occupancy_of_policy(&models.policy, &spec.states)?.tv_distance(&expert);
            curve.push((step, last));
            log::debug!("occupancy step {step}: tv {last:.4}");
            if spec.stop_fraction.is_some_and(|f| last <= f * initial) {
                break;
            }
        }
    }
    let final_occupancy = occupancy_of_policy(&models.policy, &spec.states)?;
    Ok(OccupancyReport {
        initial_tv: initial,
        final_tv: last,
        curve,
        steps: state.global_step,
        history,
        expert,
        final_occupancy,
    })
}
