use proptest::prelude::*;

use super::*;
use crate::policy::PolicyConfig;
use crate::ppo::PpoConfig;
use crate::textdata::{EncodedPair, Vocab, BOS, EOS, SEP};

fn tiny_policy(vocab: usize) -> PolicyConfig {
    PolicyConfig {
        vocab_size: vocab,
        embed_dim: 8,
        layers: 1,
        heads: 2,
        ff_dim: 16,
        max_context: 12,
        max_response: 4,
        dropout: 0.0,
        layer_norm_eps: 1e-5,
    }
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        sample_batch_size: 4,
        generator_lr: 1e-3,
        generator_warmup_steps: 0,
        ppo: PpoConfig {
            buffer_size: 16,
            minibatch_size: 8,
            update_epochs: 1,
            ..PpoConfig::default()
        },
        disc_pretrain_steps: 2,
        disc_lr: 1e-3,
        disc_hidden: 8,
        epochs: 2,
        batch_size: 8,
        validation_frequency: 1,
        ..TrainConfig::default()
    }
}

fn expert_pairs() -> Vec<EncodedPair> {
    vec![
        EncodedPair {
            state: vec![BOS, SEP, 5, SEP],
            target: vec![6, EOS],
        },
        EncodedPair {
            state: vec![BOS, SEP, 6, SEP],
            target: vec![7, 5, EOS],
        },
    ]
}

#[test]
fn demo_ratio_schedule() {
    let cfg = TrainConfig::default();
    assert_eq!(demo_ratio_at(&cfg, 0, 1100), 0.3);
    assert_eq!(demo_ratio_at(&cfg, 50, 1100), 0.3);
    assert!((demo_ratio_at(&cfg, 600, 1100) - 0.15).abs() < 1e-12);
    assert_eq!(demo_ratio_at(&cfg, 1100, 1100), 0.0);
    assert_eq!(demo_ratio_at(&cfg, 5000, 1100), 0.0);
}

proptest! {
    #[test]
    fn demo_ratio_is_non_increasing(total in 1u64..3000, a in 0u64..4000, b in 0u64..4000) {
        let cfg = TrainConfig { demo_ratio_floor: 0.05, ..TrainConfig::default() };
        let (lo, hi) = (a.min(b), a.max(b));
        let (r_lo, r_hi) = (demo_ratio_at(&cfg, lo, total), demo_ratio_at(&cfg, hi, total));
        prop_assert!(r_hi <= r_lo);
        prop_assert!((0.05..=0.3).contains(&r_hi));
    }

    #[test]
    fn demo_ratio_is_continuous_after_hold(total in 200u64..3000, s in 100u64..3000) {
        let cfg = TrainConfig::default();
        let step = (total - 100) as f64;
        let jump = (demo_ratio_at(&cfg, s, total) - demo_ratio_at(&cfg, s + 1, total)).abs();
        prop_assert!(jump <= 0.3 / step + 1e-12);
    }
}

#[test]
fn config_rejects_bad_values() {
    let mut c = TrainConfig::default();
    assert!(c.validate().is_ok());
    c.demo_ratio_floor = 0.5;
    assert!(c.validate().is_err());
    let c = TrainConfig {
        temperature: 0.0,
        ..TrainConfig::default()
    };
    assert!(c.validate().is_err());
    let text = "seed = 1\nbogus = 2\n";
    assert!(toml::from_str::<TrainConfig>(text).is_err());
    let c: TrainConfig = toml::from_str("epochs = 3\n[ppo]\nclip_epsilon = 0.1\nbuffer_size = 16\nminibatch_size = 8\nupdate_epochs = 2\nkl_coef = 0.0\nentropy_coef = 0.0\nbaseline_momentum = 0.5\n").unwrap();
    assert_eq!((c.epochs, c.ppo.update_epochs), (3, 2));
}

#[test]
fn epoch_geometry() {
    let c = TrainConfig::default();
    assert_eq!(c.steps_per_epoch(1), 1);
    assert_eq!(c.steps_per_epoch(128), 1);
    assert_eq!(c.steps_per_epoch(129), 2);
    assert_eq!(c.total_optimizer_steps(256), 750 * 2 * 4 * 16);
}

fn sample_checkpoint<T: crate::numcore::Real>() -> Checkpoint<T> {
    let cfg = tiny_train();
    let vocab = Vocab::with_words(&["a", "b", "c"]).unwrap();
    let pcfg = tiny_policy(vocab.len());
    let mut models = Models::<T>::new(&cfg, pcfg, 100).unwrap();
    let mut state = TrainState::new(&cfg);
    gail_step(&mut models, &mut state, &expert_pairs(), &cfg, 10).unwrap();
    Checkpoint {
        config: CheckpointConfig {
            train: cfg.clone(),
            policy: pcfg,
            disc: disc_config_for(&pcfg, &cfg),
            vocab_hash: vocab.hash(),
        },
        vocab,
        state,
        models,
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let ck = sample_checkpoint::<f32>();
    let bytes = ck.to_bytes();
    let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), bytes);

    let ck64 = sample_checkpoint::<f64>();
    let b64 = ck64.to_bytes();
    assert_eq!(Checkpoint::<f64>::from_bytes(&b64).unwrap().to_bytes(), b64);
    // Cross-precision load widens every value exactly.
    let wide = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
    assert_eq!(
        wide.models.policy.params().get(0).data()[3],
        ck.models.policy.params().get(0).data()[3] as f64
    );
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.egail");
    let ck = sample_checkpoint::<f32>();
    ck.save(&path).unwrap();
    assert_eq!(checkpoint_precision(&path).unwrap(), crate::numcore::Precision::F32);
    let loaded = Checkpoint::<f32>::load(&path).unwrap();
    loaded.save(&dir.path().join("y.egail")).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(dir.path().join("y.egail")).unwrap()
    );
}

#[test]
fn corruption_is_detected() {
    let bytes = sample_checkpoint::<f32>().to_bytes();
    for pos in [0, 7, bytes.len() / 2, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x40;
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&bad),
            Err(GailError::Corrupt(_))
        ));
    }
    assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 5]).is_err());
}

#[test]
fn buffer_composition_follows_demo_ratio() {
    let vocab = 8;
    for (ratio, expert_count) in [(1.0, 16), (0.0, 0)] {
        let cfg = TrainConfig {
            human_demo_ratio: ratio,
            demo_ratio_floor: ratio,
            ..tiny_train()
        };
        let mut models = Models::<f64>::new(&cfg, tiny_policy(vocab), 100).unwrap();
        let mut state = TrainState::new(&cfg);
        let m = gail_step(&mut models, &mut state, &expert_pairs(), &cfg, 10).unwrap();
        assert_eq!(m.expert_entries, expert_count);
        assert_eq!(m.generated_entries, 16 - expert_count);
        assert!(m.mean_ratio.is_finite());
        assert_eq!(state.global_step, 1);
    }
}

#[test]
fn all_expert_buffer_starts_at_ratio_one() {
    // With zero learning rate the policy is never moved, so every ratio stays 1.
    let cfg = TrainConfig {
        human_demo_ratio: 1.0,
        demo_ratio_floor: 1.0,
        generator_lr: 0.0,
        ..tiny_train()
    };
    let mut models = Models::<f64>::new(&cfg, tiny_policy(8), 100).unwrap();
    let mut state = TrainState::new(&cfg);
    let m = gail_step(&mut models, &mut state, &expert_pairs(), &cfg, 10).unwrap();
    assert!((m.mean_ratio - 1.0).abs() < 1e-12);
    assert_eq!(m.clip_fraction, 0.0);
    assert!(m.approx_kl.abs() < 1e-12);
}

#[test]
fn gail_step_is_deterministic() {
    let cfg = tiny_train();
    let run = || {
        let mut models = Models::<f32>::new(&cfg, tiny_policy(8), 100).unwrap();
        let mut state = TrainState::new(&cfg);
        let ms: Vec<_> = (0..3)
            .map(|_| gail_step(&mut models, &mut state, &expert_pairs(), &cfg, 3).unwrap())
            .collect();
        (ms, models)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
}

#[test]
fn pretraining_zero_steps_leaves_discriminator() {
    let cfg = tiny_train();
    let mut models = Models::<f64>::new(&cfg, tiny_policy(8), 100).unwrap();
    let before = models.disc.clone();
    assert!(pretrain_discriminator(&mut models, &expert_pairs(), &cfg, 0)
        .unwrap()
        .is_empty());
    assert_eq!(models.disc, before);
    let obj = pretrain_discriminator(&mut models, &expert_pairs(), &cfg, 3).unwrap();
    assert_eq!(obj.len(), 3);
    assert_ne!(models.disc, before);
}

#[test]
fn enumeration_is_a_distribution() {
    let policy = crate::policy::Policy::<f64>::new(tiny_policy(8), 9).unwrap();
    let state = vec![BOS, SEP, 5, 6, SEP];
    let rs = enumerate_responses(&policy, &state).unwrap();
    assert_eq!(rs.len(), 400 + 2401);
    let total: f64 = rs.iter().map(|(_, p)| p).sum();
    assert!((total - 1.0).abs() < 1e-9);
    // Exact masses agree with teacher-forced scoring.
    for (r, p) in rs.iter().step_by(97) {
        let (lp, _) = policy.sequence_log_prob(&state, r).unwrap();
        assert!((lp.exp() - p).abs() < 1e-12);
    }
    let states = vec![state.clone(), vec![BOS, SEP, 7, SEP]];
    let t = occupancy_of_policy(&policy, &states).unwrap();
    assert!((t.total() - 1.0).abs() < 1e-9);
    assert_eq!(t.tv_distance(&t), 0.0);
}

#[test]
fn enumeration_guard_trips() {
    let cfg = PolicyConfig {
        vocab_size: 64,
        max_context: 16,
        max_response: 6,
        ..tiny_policy(64)
    };
    let policy = crate::policy::Policy::<f32>::new(cfg, 1).unwrap();
    assert!(matches!(
        enumerate_responses(&policy, &[BOS, SEP, 5, SEP]),
        Err(GailError::TooLarge { .. })
    ));
}

#[test]
fn tv_distance_examples() {
    let mut a = OccupancyTable::new();
    a.add(0, vec![5, EOS], 0.5);
    a.add(1, vec![6, EOS], 0.5);
    let mut b = OccupancyTable::new();
    b.add(0, vec![5, EOS], 0.5);
    b.add(1, vec![7, EOS], 0.5);
    assert_eq!(a.tv_distance(&b), 0.5);
    assert_eq!(b.tv_distance(&a), 0.5);
    assert_eq!(a.tv_distance(&OccupancyTable::new()), 0.5);
}

#[test]
fn occupancy_spec_validation() {
    let spec = OccupancySpec {
        states: vec![vec![BOS, SEP, 5, SEP], vec![BOS, SEP, 6, SEP]],
        expert: vec![(0, vec![5, EOS], 1), (1, vec![6, 7], 1)],
        policy: tiny_policy(8),
        train: tiny_train(),
        max_steps: 1,
        eval_every: 1,
        stop_fraction: None,
        mle_init: None,
    };
    // [6, 7] is neither EOS-terminated nor at the length cap.
    assert!(tabular_occupancy_experiment::<f64>(&spec).is_err());
    let uneven = OccupancySpec {
        expert: vec![(0, vec![5, EOS], 2), (1, vec![6, EOS], 1)],
        ..spec.clone()
    };
    assert!(tabular_occupancy_experiment::<f64>(&uneven).is_err());
    let ok = OccupancySpec {
        expert: vec![(0, vec![5, EOS], 1), (1, vec![6, EOS], 1)],
        ..spec
    };
    let r = tabular_occupancy_experiment::<f64>(&ok).unwrap();
    assert_eq!(r.curve.len(), 2);
    assert!((r.expert.total() - 1.0).abs() < 1e-12);
    assert!((r.final_occupancy.total() - 1.0).abs() < 1e-9);
}
