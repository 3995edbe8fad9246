use std::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numcore::{grad_check_params, GradCheckOptions};
use crate::textdata::{BOS, EOS, SEP};

fn cfg() -> DiscConfig {
    DiscConfig {
        vocab_size: 20,
        embed_dim: 6,
        hidden: 100,
        max_state: 16,
        max_response: 8,
    }
}

fn pair(state: &[usize], target: &[usize]) -> EncodedPair {
    EncodedPair {
        state: state.to_vec(),
        target: target.to_vec(),
    }
}

/// Generated pairs use tokens 5..10 with long responses; expert pairs use
/// 10..15 with short ones.
fn separable(n: usize, seed: u64) -> (Vec<EncodedPair>, Vec<EncodedPair>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |lo: usize, len: usize| {
        let s: Vec<usize> = [BOS, rng.gen_range(5..15), SEP].to_vec();
        let mut r: Vec<usize> = (0..len).map(|_| rng.gen_range(lo..lo + 5)).collect();
        r.push(EOS);
        pair(&s, &r)
    };
    let gen = (0..n).map(|_| make(5, 6)).collect();
    let exp = (0..n).map(|_| make(10, 2)).collect();
    (gen, exp)
}

#[test]
fn feature_dimension() {
    assert_eq!(cfg().feature_dim(), 14);
    let d = Discriminator::<f64>::new(cfg(), 0).unwrap();
    assert_eq!(d.params().get(1).shape(), &[14, 100]);
}

#[test]
fn zero_head_scores_half_and_objective_is_minus_two_ln_two() {
    let mut d = Discriminator::<f64>::new(cfg(), 3).unwrap();
    d.zero_head();
    let (gen, exp) = separable(10, 1);
    for p in gen.iter().chain(&exp) {
        assert_eq!(d.score(p).unwrap(), 0.5);
    }
    let loss = disc_loss(&d, &gen, &exp).unwrap();
    assert!((loss.value + 2.0 * LN_2).abs() < 1e-9);
}

#[test]
fn scoring_is_deterministic_and_validated() {
    let d = Discriminator::<f32>::new(cfg(), 3).unwrap();
    let p = pair(&[BOS, 7, SEP], &[8, EOS]);
    assert_eq!(d.score(&p).unwrap(), d.score(&p.clone()).unwrap());
    assert!(matches!(
        d.score(&pair(&[BOS, 25], &[EOS])),
        Err(DiscError::Unencodable(_))
    ));
    assert!(d.score(&pair(&[BOS], &[])).is_err());
    assert!(matches!(
        disc_loss(&d, &[], &[p.clone()]),
        Err(DiscError::EmptyBatch("generated"))
    ));
    assert!(matches!(
        disc_loss(&d, &[p], &[]),
        Err(DiscError::EmptyBatch("expert"))
    ));
}

#[test]
fn objective_is_never_positive() {
    let (gen, exp) = separable(6, 4);
    for seed in 0..5 {
        let d = Discriminator::<f64>::new(cfg(), seed).unwrap();
        assert!(disc_loss(&d, &gen, &exp).unwrap().value <= 0.0);
    }
}

#[test]
fn perfect_discrimination_at_clamp() {
    let v = tabular_objective(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0]);
    assert!((v - 2.0 * (1.0 - D_MIN).ln()).abs() < 1e-15);
    assert!(v < 0.0 && v > -3e-6);
}

#[test]
fn tabular_search_cannot_beat_chance_on_identical_sets() {
    let counts = [3.0, 1.0, 2.0, 4.0];
    let grid: Vec<f64> = (1..1000).map(|i| i as f64 / 1000.0).collect();
    // The objective separates over pairs, so coordinate-wise exhaustive search
    // over the grid is an exhaustive search over all tabular D.
    let mut best = vec![0.5; counts.len()];
    for i in 0..counts.len() {
        let mut top = f64::NEG_INFINITY;
        for &x in &grid {
            let mut d = best.clone();
            d[i] = x;
            let v = tabular_objective(&counts, &counts, &d);
            if v > top {
                top = v;
                best[i] = x;
            }
        }
    }
    let v = tabular_objective(&counts, &counts, &best);
    assert!(v - (-2.0 * LN_2) < 1e-6, "{v}");
}

#[test]
fn trained_on_separable_fixture() {
    let (gen, exp) = separable(32, 5);
    let mut d = Discriminator::<f32>::new(cfg(), 1).unwrap();
    let mut opt = disc_optimizer(&d, AdamWConfig::new(1e-2, 0.01));
    let start = disc_loss(&d, &gen, &exp).unwrap().value;
    for _ in 0..150 {
        disc_update(&mut d, &mut opt, &gen, &exp).unwrap();
    }
    let end = disc_loss(&d, &gen, &exp).unwrap().value;
    assert!(end > -0.2 && end > start, "{start} -> {end}");
    let (held_gen, held_exp) = separable(16, 6);
    assert!(d.score_all(&held_gen).unwrap().iter().all(|&s| s > 0.9));
    assert!(d.accuracy(&held_gen, &held_exp).unwrap() > 0.99);
}

#[test]
fn updates_raise_objective_over_a_window() {
    let (gen, exp) = separable(16, 8);
    let mut d = Discriminator::<f32>::new(cfg(), 2).unwrap();
    let mut opt = disc_optimizer(&d, AdamWConfig::new(1e-4, 0.01));
    let mut values = Vec::new();
    for _ in 0..21 {
        values.push(disc_update(&mut d, &mut opt, &gen, &exp).unwrap());
    }
    assert!(values[20] > values[0], "{values:?}");
}

#[test]
fn zero_learning_rate_is_identity() {
    let (gen, exp) = separable(4, 8);
    let mut d = Discriminator::<f32>::new(cfg(), 2).unwrap();
    let before = d.clone();
    let mut opt = disc_optimizer(&d, AdamWConfig::new(0.0, 0.01));
    disc_update(&mut d, &mut opt, &gen, &exp).unwrap();
    assert_eq!(d, before);
    assert_eq!(opt.step, 1);
}

#[test]
fn loss_gradient_check() {
    let (gen, exp) = separable(3, 9);
    let d = Discriminator::<f64>::new(cfg(), 7).unwrap();
    let report = grad_check_params(
        d.params(),
        |g, vars| {
            let mut terms = Vec::new();
            for p in &gen {
                let s = d.score_tape(g, vars, p).map_err(num)?;
                terms.push(g.ln(s));
            }
            for p in &exp {
                let s = d.score_tape(g, vars, p).map_err(num)?;
                let om = g.affine(s, -1.0, 1.0);
                terms.push(g.ln(om));
            }
            let all = g.concat_cols(&terms)?;
            Ok(g.mean(all))
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

fn num(e: DiscError) -> NumError {
    match e {
        DiscError::Num(n) => n,
        other => panic!("{other}"),
    }
}

#[test]
fn reward_values() {
    assert!((reward_from_score(0.5) - LN_2).abs() < 1e-15);
    assert!((reward_from_score(1.0) - 1.0000005e-6).abs() < 1e-12);
    assert!((reward_from_score(0.0) - 13.815510557964274).abs() < 1e-9);
    let mut last = f64::INFINITY;
    for i in 1..1000 {
        let r = reward_from_score(i as f64 / 1000.0);
        assert!(r < last);
        last = r;
    }
}

#[test]
fn regularizer_closed_form() {
    assert!((g_regularizer(-LN_2) - 2.0 * LN_2).abs() < 1e-12);
    assert_eq!(g_regularizer(0.5), f64::INFINITY);
    assert_eq!(g_regularizer(0.0), f64::INFINITY);
    let deriv = |x: f64| (2.0 * x.exp() - 1.0) / (1.0 - x.exp());
    assert!(deriv(-LN_2 - 0.01) < 0.0 && deriv(-LN_2 + 0.01) > 0.0);
    assert!(g_regularizer(-10.0) > g_regularizer(-LN_2 - 2.0));
    assert!(g_regularizer(-0.01) > g_regularizer(-0.1));
    assert!(g_regularizer(-0.1) > g_regularizer(-0.5));
    assert!(g_regularizer(-1e-12) > 25.0);
}

#[test]
fn regularizer_grid_argmin() {
    let n = 100_000;
    let (lo, hi) = (-10.0, -1e-4);
    let (mut best_x, mut best) = (0.0, f64::INFINITY);
    for i in 0..n {
        let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let v = g_regularizer(x);
        if v < best {
            best = v;
            best_x = x;
        }
    }
    assert!((best_x + LN_2).abs() < 1e-4, "{best_x}");
    assert!((best - 2.0 * LN_2).abs() < 1e-6);
}
