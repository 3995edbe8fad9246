use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numcore::{grad_check_params, GradCheckOptions};
use crate::textdata::{EncodedPair, BOS, EOS, SEP};

fn tiny(vocab: usize) -> PolicyConfig {
    PolicyConfig {
        vocab_size: vocab,
        embed_dim: 8,
        layers: 2,
        heads: 2,
        ff_dim: 12,
        max_context: 24,
        max_response: 6,
        dropout: 0.0,
        layer_norm_eps: 1e-5,
    }
}

/// A policy whose every next-token distribution is `softmax(bias)`.
fn fixed_distribution(bias: &[f64]) -> Policy<f64> {
    let mut p = Policy::<f64>::new(tiny(bias.len()), 1).unwrap();
    p.zero_head();
    let i = p.params().index_of("head.b").unwrap();
    p.params_mut().get_mut(i).data_mut().copy_from_slice(bias);
    p
}

#[test]
fn config_validation() {
    assert!(tiny(10).validate().is_ok());
    let mut c = tiny(10);
    c.heads = 3;
    assert!(c.validate().is_err());
    let mut c = tiny(10);
    c.max_context = c.max_response + 2;
    assert!(c.validate().is_err());
    assert!(PolicyConfig::for_vocab(500).validate().is_ok());
}

#[test]
fn causality_is_bitwise() {
    let p = Policy::<f32>::new(tiny(12), 3).unwrap();
    let a = [BOS, 5, 6, 7, SEP, 8, 9];
    let la = p.forward_logits(&a).unwrap();
    for t in 0..a.len() - 1 {
        let mut b = a;
        b[t + 1] = 11;
        let lb = p.forward_logits(&b).unwrap();
        let v = 12;
        assert_eq!(la.data()[..(t + 1) * v], lb.data()[..(t + 1) * v]);
    }
}

#[test]
fn zero_head_is_uniform() {
    let mut p = Policy::<f64>::new(tiny(7), 0).unwrap();
    p.zero_head();
    let l = p.forward_logits(&[BOS, 5, 6]).unwrap();
    for row in l.data().chunks(7) {
        let probs = crate::numcore::softmax(row).unwrap();
        assert!(probs.iter().all(|&q| (q - 1.0 / 7.0).abs() < 1e-15));
    }
}

#[test]
fn single_token_shape() {
    let p = Policy::<f32>::new(tiny(9), 0).unwrap();
    assert_eq!(p.forward_logits(&[BOS]).unwrap().shape(), &[1, 9]);
}

#[test]
fn context_and_range_errors() {
    let p = Policy::<f32>::new(tiny(9), 0).unwrap();
    let long = vec![BOS; 25];
    assert!(matches!(
        p.forward_logits(&long),
        Err(PolicyError::ContextOverflow { len: 25, max: 24 })
    ));
    assert!(matches!(
        p.forward_logits(&[BOS, 9]),
        Err(PolicyError::TokenOutOfRange { token: 9, .. })
    ));
    assert!(p.sequence_log_prob(&[BOS], &[]).is_err());
    assert!(p.sequence_log_prob(&[BOS], &[12]).is_err());
}

#[test]
fn decoder_matches_batched_forward_bitwise() {
    let p = Policy::<f32>::new(tiny(12), 4).unwrap();
    let toks = [BOS, 5, SEP, 9, 10, SEP, 6, 7];
    let full = p.forward_logits(&toks).unwrap();
    let mut dec = p.decoder();
    for (i, &t) in toks.iter().enumerate() {
        let row = p.step(&mut dec, t).unwrap();
        assert_eq!(row.as_slice(), &full.data()[i * 12..(i + 1) * 12]);
    }
    assert_eq!(dec.position(), toks.len());
}

#[test]
fn sampling_is_deterministic_in_z() {
    let p = Policy::<f32>::new(tiny(12), 5).unwrap();
    let s = [BOS, SEP, 6, SEP];
    let a = sample_response(&p, &s, 42, 1.0).unwrap();
    let b = sample_response(&p, &s, 42, 1.0).unwrap();
    assert_eq!(a, b);
    assert!(a.response.len() <= 6);
    assert!(a.log_probs.iter().all(|l| l.is_finite() && *l <= 0.0));
    let differs = (0..20).any(|z| sample_response(&p, &s, z, 1.0).unwrap().response != a.response);
    assert!(differs);
}

#[test]
fn greedy_breaks_ties_toward_lowest_id() {
    let p = fixed_distribution(&[0.0, 0.0, 0.0, 1.5, 1.5, 1.5]);
    let r = sample_response(&p, &[BOS], 9, 1e-9).unwrap();
    assert!(r.response.iter().all(|&t| t == 3));
    assert_eq!(r.response.len(), 6);
    assert!(matches!(
        sample_response(&p, &[BOS], 9, 0.0),
        Err(PolicyError::BadTemperature(_))
    ));
}

#[test]
fn first_token_frequencies_match_distribution() {
    let target = [0.7, 0.2, 0.1];
    let bias: Vec<f64> = target.iter().map(|p: &f64| p.ln()).collect();
    let p = fixed_distribution(&bias);
    let mut counts = [0usize; 3];
    let n = 10_000;
    for z in 0..n {
        counts[sample_response(&p, &[BOS], z, 1.0).unwrap().response[0]] += 1;
    }
    for (c, t) in counts.iter().zip(target) {
        assert!((*c as f64 / n as f64 - t).abs() < 0.02, "{counts:?}");
    }
}

#[test]
fn next_token_frequencies_pass_chi_square() {
    let p = Policy::<f64>::new(tiny(10), 11).unwrap();
    let state = [BOS, 5, SEP, 6, SEP];
    let logits = p.forward_logits(&state).unwrap();
    let last = &logits.data()[4 * 10..];
    let probs = crate::numcore::softmax(last).unwrap();
    let n = 10_000;
    let mut counts = [0f64; 10];
    for z in 0..n {
        counts[sample_response(&p, &state, z, 1.0).unwrap().response[0]] += 1.0;
    }
    let chi: f64 = counts
        .iter()
        .zip(&probs)
        .map(|(o, q)| (o - q * n as f64).powi(2) / (q * n as f64))
        .sum();
    // Upper 0.001 quantile of chi-square with 9 degrees of freedom.
    assert!(chi < 27.877, "chi-square {chi}");
}

#[test]
fn uniform_policy_log_prob() {
    let mut p = Policy::<f64>::new(tiny(11), 0).unwrap();
    p.zero_head();
    let r = [5, 6, 7, EOS];
    let (total, per) = p.sequence_log_prob(&[BOS, SEP], &r).unwrap();
    assert!((total + 4.0 * 11f64.ln()).abs() < 1e-12);
    assert_eq!(per.len(), 4);
}

#[test]
fn forced_sequence_has_zero_log_prob() {
    let mut bias = vec![0.0; 6];
    bias[4] = 1e4;
    let p = fixed_distribution(&bias);
    let (total, _) = p.sequence_log_prob(&[BOS], &[4, 4, 4]).unwrap();
    assert_eq!(total, 0.0);
}

#[test]
fn rescoring_matches_sampled_log_probs() {
    let p = Policy::<f32>::new(tiny(14), 8).unwrap();
    let s = [BOS, 6, 7, SEP, 8, SEP];
    for z in 0..30 {
        for temp in [0.7, 1.0, 1.5] {
            let g = sample_response(&p, &s, z, temp).unwrap();
            let (total, per) = p.sequence_log_prob(&s, &g.response).unwrap();
            for (a, b) in per.iter().zip(&g.log_probs) {
                assert!((*a as f64 - b).abs() < 1e-5);
            }
            let sum: f32 = per.iter().sum();
            assert!((total - sum).abs() < 1e-6);
            assert!(per.iter().all(|l| l.exp() > 0.0 && l.exp() <= 1.0));
        }
    }
}

#[test]
fn full_network_gradient_check() {
    let p = Policy::<f64>::new(tiny(9), 21).unwrap();
    let state = [BOS, 5, SEP, 6, SEP];
    let resp = [7, 8, EOS];
    let report = grad_check_params(
        p.params(),
        |g, vars| {
            let (lp, logits) = p
                .response_log_probs_tape(g, vars, &state, &resp, None)
                .map_err(|e| match e {
                    PolicyError::Num(n) => n,
                    other => panic!("{other}"),
                })?;
            let ent = g.entropy(logits);
            let e = g.mean(ent);
            let s = g.sum(lp);
            let s = g.scale(s, 0.3);
            g.add(s, e)
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

fn pair(state: &[usize], target: &[usize]) -> EncodedPair {
    EncodedPair {
        state: state.to_vec(),
        target: target.to_vec(),
    }
}

fn toy_pairs(n: usize, seed: u64) -> Vec<EncodedPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let cue = rng.gen_range(5..9);
            let filler = rng.gen_range(9..12);
            pair(&[BOS, SEP, filler, cue, SEP], &[cue + 7, cue + 8, EOS])
        })
        .collect()
}

#[test]
fn mle_zero_steps_is_identity() {
    let mut p = Policy::<f32>::new(tiny(17), 2).unwrap();
    let before = p.clone();
    let cfg = MleConfig {
        steps: 0,
        ..MleConfig::default()
    };
    mle_pretrain(&mut p, &toy_pairs(8, 0), &[], &cfg).unwrap();
    assert_eq!(p, before);
}

#[test]
fn mle_reduces_training_loss() {
    let mut p = Policy::<f32>::new(tiny(17), 2).unwrap();
    let train = toy_pairs(64, 1);
    let val = toy_pairs(16, 2);
    let cfg = MleConfig {
        steps: 200,
        batch_size: 16,
        validation_frequency: 10,
        ..MleConfig::default()
    };
    let start = mean_cross_entropy(&p, &train).unwrap();
    let report = mle_pretrain(&mut p, &train, &val, &cfg).unwrap();
    assert_eq!(report.train_losses.len(), 200);
    let end = mean_cross_entropy(&p, &train).unwrap();
    assert!(end < start, "{start} -> {end}");
    let best = report
        .validation
        .iter()
        .map(|v| v.1)
        .fold(f64::INFINITY, f64::min);
    assert!((mean_cross_entropy(&p, &val).unwrap() - best).abs() < 1e-9);
    assert!(best < report.validation[0].1);
}

#[test]
fn mle_memorizes_single_trajectory() {
    let mut p = Policy::<f32>::new(tiny(17), 3).unwrap();
    let one = vec![pair(&[BOS, SEP, 9, 5, SEP], &[12, 13, 14, EOS])];
    let cfg = MleConfig {
        steps: 150,
        batch_size: 1,
        lr: 3e-3,
        weight_decay: 0.0,
        ..MleConfig::default()
    };
    mle_pretrain(&mut p, &one, &[], &cfg).unwrap();
    let ce = mean_cross_entropy(&p, &one).unwrap();
    assert!(ce < 0.1, "{ce}");
}

#[test]
fn mle_is_deterministic_with_dropout() {
    let mut c = tiny(17);
    c.dropout = 0.1;
    let run = || {
        let mut p = Policy::<f32>::new(c, 2).unwrap();
        let cfg = MleConfig {
            steps: 10,
            batch_size: 8,
            ..MleConfig::default()
        };
        mle_pretrain(&mut p, &toy_pairs(16, 1), &[], &cfg).unwrap();
        p
    };
    assert_eq!(run(), run());
}
