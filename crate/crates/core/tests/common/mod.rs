//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use egail::gail::{OccupancySpec, TrainConfig};
use egail::numcore::LrSchedule;
use egail::policy::{sample_response, MleConfig, Policy, PolicyConfig};
use egail::ppo::{compute_advantages, ppo_update, Baseline, BufferEntry, GenOptimizer, PpoConfig};
use egail::textdata::{EncodedPair, BOS, EOS, SEP};

/// Runs PPO on a two-armed bandit (token 0 pays 1, token 1 pays 0) and
/// returns the number of buffers until the rewarded arm has probability >= 0.95.
pub fn bandit_buffers_to_converge(max_buffers: usize) -> Option<usize> {
    let cfg = PolicyConfig {
        vocab_size: 2,
        embed_dim: 8,
        layers: 1,
        heads: 1,
        ff_dim: 8,
        max_context: 8,
        max_response: 1,
        dropout: 0.0,
        layer_norm_eps: 1e-5,
    };
    let mut policy = Policy::<f32>::new(cfg, 0).unwrap();
    let ppo = PpoConfig::default();
    let mut opt = GenOptimizer::new(&policy, 0.0, LrSchedule::constant(1e-3));
    let mut baseline = Baseline::new(ppo.baseline_momentum);
    let state = [BOS];
    let p_arm = |p: &Policy<f32>| p.sequence_log_prob(&state, &[0]).unwrap().0.exp();
    let mut z = 0u64;
    for b in 0..max_buffers {
        if p_arm(&policy) >= 0.95 {
            return Some(b);
        }
        let mut entries: Vec<BufferEntry> = (0..ppo.buffer_size)
            .map(|_| {
                z += 1;
                let g = sample_response(&policy, &state, z, 1.0).unwrap();
                let mut e = BufferEntry::new(
                    EncodedPair {
                        state: state.to_vec(),
                        target: g.response.clone(),
                    },
                    g.total_log_prob(),
                    false,
                );
                e.reward = if g.response[0] == 0 { 1.0 } else { 0.0 };
                e
            })
            .collect();
        compute_advantages(&mut entries, &mut baseline).unwrap();
        ppo_update(&mut policy, &entries, &ppo, &mut opt, b as u64).unwrap();
    }
    (p_arm(&policy) >= 0.95).then_some(max_buffers)
}

/// Vocabulary of 8: the five reserved ids plus words 5, 6 and 7.
pub fn occupancy_policy() -> PolicyConfig {
    PolicyConfig {
        vocab_size: 8,
        embed_dim: 16,
        layers: 1,
        heads: 2,
        ff_dim: 32,
        max_context: 12,
        max_response: 4,
        dropout: 0.0,
        layer_norm_eps: 1e-5,
    }
}

/// The discriminator learns a hundred times faster than the generator so
/// its reward stays informative while the policy moves.
pub fn occupancy_train(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        generator_lr: 1e-4,
        generator_weight_decay: 0.0,
        generator_warmup_steps: 0,
        human_demo_ratio: 0.3,
        human_demo_ratio_warmup_steps: 100,
        demo_ratio_floor: 0.1,
        ppo: PpoConfig {
            update_epochs: 1,
            ..PpoConfig::default()
        },
        disc_lr: 1e-2,
        disc_weight_decay: 0.0,
        ..TrainConfig::default()
    }
}

fn prompt_state(a: usize, b: usize) -> Vec<usize> {
    vec![BOS, SEP, a, b, SEP]
}

/// Five prompts, each mapped to its own response.
pub fn deterministic_five(seed: u64, max_steps: u64) -> OccupancySpec {
    let states = vec![
        prompt_state(5, 5),
        prompt_state(5, 6),
        prompt_state(6, 7),
        prompt_state(7, 5),
        prompt_state(7, 7),
    ];
    let responses = [
        vec![5, EOS],
        vec![6, 7, EOS],
        vec![7, EOS],
        vec![5, 6, EOS],
        vec![6, 6, 5, EOS],
    ];
    OccupancySpec {
        states,
        expert: responses
            .into_iter()
            .enumerate()
            .map(|(i, r)| (i, r, 1))
            .collect(),
        policy: occupancy_policy(),
        train: occupancy_train(seed),
        max_steps,
        eval_every: 10,
        stop_fraction: None,
        mle_init: None,
    }
}

/// The same expert with the policy first fitted to it by teacher forcing.
pub fn expert_initialized(seed: u64, max_steps: u64) -> OccupancySpec {
    let mut spec = deterministic_five(seed, max_steps);
    spec.mle_init = Some(MleConfig {
        steps: 400,
        batch_size: 5,
        lr: 1e-2,
        weight_decay: 0.0,
        validation_frequency: 1000,
        seed,
    });
    // At 1e-4 noise-only advantages walk a saturated policy away from the
    // fixed point within ~100 steps; a smaller step keeps the sanity check about
    // the equilibrium rather than about optimizer noise.
    spec.train.generator_lr = 1e-5;
    spec
}

/// One prompt whose expert answers with either of two responses equally often.
/// The slower generator damps the mode-to-mode oscillation around the mixed
/// equilibrium.
pub fn uniform_two(seed: u64, max_steps: u64) -> OccupancySpec {
    let mut train = occupancy_train(seed);
    train.generator_lr = 3e-5;
    OccupancySpec {
        states: vec![prompt_state(5, 6)],
        expert: vec![(0, vec![5, EOS], 1), (0, vec![7, 6, EOS], 1)],
        policy: occupancy_policy(),
        train,
        max_steps,
        eval_every: 10,
        stop_fraction: None,
        mle_init: None,
    }
}
