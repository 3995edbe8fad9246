mod common;

use egail::gail::tabular_occupancy_experiment;
use egail::textdata::EOS;

#[test]
fn expert_initialized_policy_stays_at_the_fixed_point() {
    let r = tabular_occupancy_experiment::<f64>(&common::expert_initialized(0, 300)).unwrap();
    assert!(r.initial_tv < 0.01, "initial tv {}", r.initial_tv);
    let worst = r.curve.iter().map(|&(_, tv)| tv).fold(0.0, f64::max);
    assert!(worst <= 0.05, "curve {:?}", r.curve);
}

#[test]
fn uniform_expert_over_two_responses_is_matched() {
    let r = tabular_occupancy_experiment::<f64>(&common::uniform_two(0, 1500)).unwrap();
    let a = r.final_occupancy.mass(0, &[5, EOS]);
    let b = r.final_occupancy.mass(0, &[7, 6, EOS]);
    assert!((a - 0.5).abs() <= 0.15 && (b - 0.5).abs() <= 0.15, "masses {a} {b}");
    assert!(r.final_tv < r.initial_tv);
}
