mod common;

#[test]
fn bandit_prefers_rewarded_arm() {
    let n = common::bandit_buffers_to_converge(200);
    assert!(n.is_some());
    eprintln!("converged after {:?} buffers", n);
}
