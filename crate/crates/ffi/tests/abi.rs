use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use egail::cli::{cmd_prepare, cmd_train, Overrides, RunConfig};
use egail_ffi::*;

const TINY: &str = r#"
seed = 3
precision = 64
[data]
max_vocab = 80
[data.synth]
conversations = 24
min_turns = 1
max_turns = 3
tweets = 2
seed = 1
[model]
embed_dim = 8
layers = 1
heads = 2
ff_dim = 16
max_context = 32
max_response = 8
[train]
epochs = 1
batch_size = 4
mle_steps = 4
disc_pretrain_steps = 2
[train.ppo]
buffer_size = 16
minibatch_size = 8
update_epochs = 1
"#;

fn trained(dir: &Path) -> PathBuf {
    let cfg = RunConfig::from_toml(TINY)
        .and_then(|c| c.resolve(Path::new("."), Overrides::default(), Some(dir.to_path_buf())))
        .unwrap();
    cmd_prepare(&cfg).unwrap();
    cmd_train(&cfg, None).unwrap().latest
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = egail_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

#[test]
fn model_lifecycle_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let path = c(trained(dir.path()).to_str().unwrap());
    let mut model = ptr::null_mut();
    let st = unsafe { egail_model_load(path.as_ptr(), 1.0, 5, &mut model) };
    assert_eq!(st, EgailStatus::Ok);
    assert!(!model.is_null());

    let mut expected = 0;
    for prompt in ["i lost my job today", "what happened next"] {
        let mut text = ptr::null_mut();
        let mut score = f64::NAN;
        let p = c(prompt);
        let st = unsafe { egail_model_respond(model, p.as_ptr(), &mut text, &mut score) };
        assert_eq!(st, EgailStatus::Ok);
        assert!((0.0..=1.0).contains(&score));
        let reply = unsafe { CStr::from_ptr(text) }.to_str().unwrap().to_owned();
        unsafe { egail_string_free(text) };
        if !reply.is_empty() {
            expected += 2;
        }
        let mut len = 99;
        assert_eq!(unsafe { egail_model_history_len(model, &mut len) }, EgailStatus::Ok);
        assert_eq!(len, expected);
    }
    assert_eq!(unsafe { egail_model_reset(model) }, EgailStatus::Ok);
    let mut len = 99;
    unsafe { egail_model_history_len(model, &mut len) };
    assert_eq!(len, 0);
    unsafe { egail_model_free(model) };
}

#[test]
fn same_seed_gives_same_replies() {
    let dir = tempfile::tempdir().unwrap();
    let path = c(trained(dir.path()).to_str().unwrap());
    let run = || {
        let mut model = ptr::null_mut();
        unsafe { egail_model_load(path.as_ptr(), 0.8, 9, &mut model) };
        let p = c("the storm kept me up");
        let mut text = ptr::null_mut();
        unsafe { egail_model_respond(model, p.as_ptr(), &mut text, ptr::null_mut()) };
        let s = unsafe { CStr::from_ptr(text) }.to_str().unwrap().to_owned();
        unsafe {
            egail_string_free(text);
            egail_model_free(model);
        }
        s
    };
    assert_eq!(run(), run());
}

#[test]
fn load_errors_are_reported() {
    let mut model = ptr::null_mut();
    let missing = c("/nonexistent/model.egail");
    let st = unsafe { egail_model_load(missing.as_ptr(), 1.0, 0, &mut model) };
    assert_eq!(st, EgailStatus::Data);
    assert!(model.is_null());
    assert!(last_error().contains("nonexistent"));

    let st = unsafe { egail_model_load(ptr::null(), 1.0, 0, &mut model) };
    assert_eq!(st, EgailStatus::NullPointer);

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.egail");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = c(junk.to_str().unwrap());
    let st = unsafe { egail_model_load(junk.as_ptr(), 1.0, 0, &mut model) };
    assert_eq!(st, EgailStatus::Data);
}

#[test]
fn bad_temperature_is_an_argument_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = c(trained(dir.path()).to_str().unwrap());
    let mut model = ptr::null_mut();
    let st = unsafe { egail_model_load(path.as_ptr(), 0.0, 0, &mut model) };
    assert_eq!(st, EgailStatus::InvalidArgument);
    assert!(model.is_null());
}

#[test]
fn metrics() {
    let mut out = 0.0;
    let probs = [0.5, 0.25, 0.125];
    assert_eq!(unsafe { egail_perplexity(probs.as_ptr(), 3, &mut out) }, EgailStatus::Ok);
    assert!((out - 4.0).abs() < 1e-12);

    let bad = [0.5, 1.5];
    assert_eq!(
        unsafe { egail_perplexity(bad.as_ptr(), 2, &mut out) },
        EgailStatus::InvalidArgument
    );

    let a = c("the cat sat on the mat");
    assert_eq!(unsafe { egail_bleu(a.as_ptr(), a.as_ptr(), &mut out) }, EgailStatus::Ok);
    assert!((out - 100.0).abs() < 1e-9);
    let bad_utf8 = [0xffu8, 0];
    let st = unsafe { egail_bleu(bad_utf8.as_ptr().cast(), a.as_ptr(), &mut out) };
    assert_eq!(st, EgailStatus::InvalidUtf8);

    let ln2 = std::f64::consts::LN_2;
    assert!((egail_regularizer_g(-ln2) - 2.0 * ln2).abs() < 1e-12);
    assert!(egail_regularizer_g(0.0).is_infinite());
}

#[test]
fn null_handles_are_tolerated() {
    unsafe {
        egail_model_free(ptr::null_mut());
        egail_string_free(ptr::null_mut());
    }
    assert_eq!(unsafe { egail_model_reset(ptr::null_mut()) }, EgailStatus::NullPointer);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/egail.h")).unwrap();
    for name in [
        "egail_model_load",
        "egail_model_free",
        "egail_model_respond",
        "egail_model_reset",
        "egail_model_history_len",
        "egail_perplexity",
        "egail_bleu",
        "egail_regularizer_g",
        "egail_string_free",
        "egail_last_error_message",
        "EGAIL_STATUS_OK",
        "typedef struct EgailModel EgailModel",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
