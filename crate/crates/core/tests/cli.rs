use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::Command;

use egail::cli::{
    cmd_chat, cmd_eval, cmd_inspect, cmd_prepare, cmd_stats, cmd_train, read_prepared, CliError,
    Overrides, RunConfig, DATA_DIR, RESOLVED_CONFIG, SPLIT_FILES, STATS_FILE, TRAIN_DIR, VOCAB_FILE,
};
use egail::eval::TurnBucket;
use egail::gail::{BEST, LATEST, METRICS, MLE};
use egail::numcore::Precision;

const CONVERSATIONS: &str = r#"{"id": "a", "label": "sad", "utterances": ["My dog died.", "I am so sorry.", "Thanks, it hurts.", "That is hard."]}
{"id": "b", "utterances": ["I got the job!", "Congratulations!", "Thank you."]}
not json at all
{"id": "c", "utterances": []}
{"id": "d", "utterances": ["Rain again today.", "At least the plants are happy."]}
"#;

const TWEETS: &str = r#"{"id": "t1", "text": "Be kind to yourself today."}
{"id": "t2", "text": "Hope everyone has a calm evening."}
"#;

const TINY: &str = r#"
seed = 4
[data]
conversations = ["convs.jsonl"]
tweets = ["tweets.jsonl"]
max_vocab = 100
[data.synth]
conversations = 30
min_turns = 1
max_turns = 3
tweets = 0
seed = 2
[model]
embed_dim = 8
layers = 1
heads = 2
ff_dim = 16
max_context = 40
max_response = 8
[train]
epochs = 2
batch_size = 4
mle_steps = 4
disc_pretrain_steps = 2
validation_frequency = 1
[train.ppo]
buffer_size = 16
minibatch_size = 8
update_epochs = 1
"#;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("convs.jsonl"), CONVERSATIONS).unwrap();
        fs::write(dir.path().join("tweets.jsonl"), TWEETS).unwrap();
        let text = format!("output_dir = \"out\"\n{config}");
        fs::write(dir.path().join("run.toml"), text).unwrap();
        Fixture { dir }
    }

    fn config_path(&self) -> PathBuf {
        self.dir.path().join("run.toml")
    }

    fn config(&self) -> RunConfig {
        RunConfig::load(&self.config_path(), Overrides::default()).unwrap()
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn prepare_counts_and_reproducibility() {
    let fx = Fixture::new(TINY);
    let cfg = fx.config();
    let out = cmd_prepare(&cfg).unwrap();
    let s = &out.stats;
    // a: 2 turns, b: 1 turn with one dropped utterance, d: 1 turn, two tweets.
    assert_eq!(s.malformed_lines, 2);
    assert_eq!(s.corpus.tweets, 2);
    assert_eq!(s.corpus.tweet_trajectories, 2);
    assert_eq!(s.corpus.conversations, 3 + 30);
    assert!(s.corpus.conversation_trajectories >= 4 + 30);
    assert!(s.corpus.dropped_utterances >= 1);
    assert_eq!(s.train + s.test + s.validation, s.corpus.total_trajectories);
    assert_eq!(out.malformed.iter().map(|(_, e)| e.line).collect::<Vec<_>>(), vec![3, 4]);

    let data = fx.out().join(DATA_DIR);
    for f in SPLIT_FILES.iter().chain([&VOCAB_FILE, &STATS_FILE]) {
        assert!(data.join(f).is_file(), "{f} missing");
    }
    assert!(fx.out().join(RESOLVED_CONFIG).is_file());
    let prepared = read_prepared(&fx.out()).unwrap();
    assert_eq!(prepared.vocab.len(), s.vocab_size);
    assert_eq!(prepared.train.len(), s.train);

    let first = snapshot(&data);
    cmd_prepare(&cfg).unwrap();
    assert_eq!(first, snapshot(&data), "rerun changed the prepared data");
    assert!(cmd_stats(&cfg).unwrap().contains("malformed lines      2"));
}

#[test]
fn prepare_with_missing_input_writes_nothing() {
    let fx = Fixture::new(&TINY.replace("tweets.jsonl", "absent.jsonl"));
    let err = cmd_prepare(&fx.config()).unwrap_err();
    assert!(matches!(err, CliError::Data(_)), "{err:?}");
    assert_eq!(err.exit_code(), 2);
    assert!(!fx.out().join(DATA_DIR).exists());
}

#[test]
fn config_rejects_unknown_keys_and_missing_data() {
    let err = RunConfig::from_toml("seed = 1\nsede = 2\n").unwrap_err();
    assert!(matches!(err, CliError::Usage(_)));
    let err = RunConfig::from_toml("[train]\nepocs = 3\n").unwrap_err();
    assert!(err.to_string().contains("epocs"), "{err}");
    let err = RunConfig::from_toml("seed = 1\n")
        .unwrap()
        .resolve(Path::new("."), Overrides::default(), None)
        .unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn config_resolution_order() {
    let base = RunConfig::from_toml(TINY).unwrap();
    let r = base
        .clone()
        .resolve(Path::new("/cfg"), Overrides::default(), Some("/env".into()))
        .unwrap();
    assert_eq!(r.output_dir(), PathBuf::from("/env"));
    assert_eq!(r.data.conversations, vec![PathBuf::from("/cfg/convs.jsonl")]);
    assert_eq!(r.train.seed, 4);

    let o = Overrides {
        seed: Some(9),
        precision: Some(Precision::F64),
    };
    let r = base.clone().resolve(Path::new("/cfg"), o, None).unwrap();
    assert_eq!((r.seed, r.train.seed, r.precision), (9, 9, 64));
    assert_eq!(r.output_dir(), PathBuf::from(egail::cli::DEFAULT_OUTPUT_DIR));

    let mut with_out = base;
    with_out.output_dir = Some("runs/a".into());
    let r = with_out.resolve(Path::new("/cfg"), Overrides::default(), Some("/env".into())).unwrap();
    assert_eq!(r.output_dir(), PathBuf::from("/cfg/runs/a"));

    // The echoed config reproduces itself.
    let again = RunConfig::from_toml(&r.to_toml()).unwrap();
    assert_eq!(again, r);

    let bad = RunConfig::from_toml("precision = 16\n[data.synth]\nconversations = 5\nmin_turns = 1\nmax_turns = 2\ntweets = 0\nseed = 0\n")
        .unwrap()
        .resolve(Path::new("."), Overrides::default(), None);
    assert!(matches!(bad, Err(CliError::Usage(_))));
}

#[test]
fn train_eval_inspect_chat() {
    let fx = Fixture::new(TINY);
    let cfg = fx.config();
    assert!(matches!(cmd_train(&cfg, None), Err(CliError::Data(_))), "train before prepare");
    cmd_prepare(&cfg).unwrap();
    let outcome = cmd_train(&cfg, None).unwrap();
    let train_dir = fx.out().join(TRAIN_DIR);
    for f in [LATEST, BEST, MLE, METRICS] {
        assert!(train_dir.join(f).is_file(), "{f} missing");
    }
    assert_eq!(outcome.best, train_dir.join(BEST));

    let eval = cmd_eval(&cfg, None, None).unwrap();
    assert_eq!(eval.checkpoint, train_dir.join(BEST));
    let table = fs::read_to_string(&eval.table).unwrap();
    for b in TurnBucket::ALL {
        assert!(table.contains(b.label()), "{table}");
    }
    assert!(table.contains(" ± "), "{table}");
    // One line per bucket plus the uniform sanity line.
    assert_eq!(fs::read_to_string(&eval.jsonl).unwrap().lines().count(), eval.report.buckets.len() + 1);
    // Loading at the other width converts rather than failing.
    let wide = cmd_eval(&cfg, Some(&train_dir.join(BEST)), Some(Precision::F64)).unwrap();
    assert_eq!(wide.report.buckets.len(), eval.report.buckets.len());

    let summary = cmd_inspect(&train_dir.join(LATEST)).unwrap();
    for field in ["config hash", "vocabulary", "step", "demo ratio", "policy params", "disc params"] {
        assert!(summary.contains(field), "{field} missing:\n{summary}");
    }
    assert!(summary.contains(&format!("step              {}", outcome.state.global_step)));

    let mut out = Vec::new();
    cmd_chat(
        &train_dir.join(BEST),
        1.0,
        3,
        true,
        None,
        Cursor::new("hello there zyzzyva\n/reset\nhow are you\n/quit\nignored\n"),
        &mut out,
    )
    .unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.matches("bot> ").count(), 2, "{text}");
    assert!(text.contains("zyzzyva"), "{text}");
    assert!(text.contains("[history cleared]"));
    assert!(text.contains("D(generated)"));

    let err = cmd_eval(&cfg, Some(&fx.dir.path().join("none.egail")), None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

fn egail(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_egail"))
        .args(args)
        .current_dir(cwd)
        .env_remove("EGAIL_OUTPUT_DIR")
        .output()
        .unwrap()
}

#[test]
fn binary_exit_codes() {
    let fx = Fixture::new(TINY);
    let cwd = fx.dir.path();
    assert_eq!(egail(&["--help"], cwd).status.code(), Some(0));
    assert_eq!(egail(&["prepare"], cwd).status.code(), Some(1));
    assert_eq!(egail(&["frobnicate"], cwd).status.code(), Some(1));
    assert_eq!(egail(&["--config", "nope.toml", "prepare"], cwd).status.code(), Some(1));
    assert_eq!(egail(&["--config", "run.toml", "--precision", "16", "prepare"], cwd).status.code(), Some(1));
    assert_eq!(egail(&["inspect", "--checkpoint", "missing.egail"], cwd).status.code(), Some(2));
    assert_eq!(egail(&["--config", "run.toml", "train"], cwd).status.code(), Some(2));

    let ok = egail(&["--config", "run.toml", "prepare"], cwd);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("vocabulary"), "{stdout}");
    let stderr = String::from_utf8_lossy(&ok.stderr);
    assert!(stderr.contains("line 3"), "{stderr}");

    let stats = egail(&["--config", "run.toml", "stats"], cwd);
    assert_eq!(stats.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&stats.stdout).contains("trajectories"));

    fs::write(cwd.join("bad.toml"), "[model]\nheads = 3\nembed_dim = 8\n[data.synth]\nconversations = 4\nmin_turns = 1\nmax_turns = 1\ntweets = 0\nseed = 0\n").unwrap();
    let bad = egail(&["--config", "bad.toml", "prepare"], cwd);
    assert_eq!(bad.status.code(), Some(1), "{}", String::from_utf8_lossy(&bad.stderr));
}
