use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use crate::eval::{evaluate_model, EvalReport};
use crate::gail::{
    checkpoint_precision, encode_limits, train, Checkpoint, TrainData, TrainOptions, TrainOutcome,
};
use crate::numcore::{Precision, Real};
use crate::textdata::corpus_stats;

use super::chat::{run_repl, ChatSession};
use super::prepare::{gather_corpus, read_prepared};
use super::{CliError, RunConfig};

pub const TRAIN_DIR: &str = "train";
pub const EVAL_DIR: &str = "eval";

macro_rules! with_precision {
    ($p:expr, $f:ident ( $($arg:expr),* $(,)? )) => {
        match $p {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

/// Loads a checkpoint, converting its parameters to `T` if it was saved at the
/// other precision.
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>, CliError> {
    Checkpoint::<T>::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn file_precision(path: &Path, wanted: Option<Precision>) -> Result<Precision, CliError> {
    match wanted {
        Some(p) => Ok(p),
        None => checkpoint_precision(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display()))),
    }
}

/// Trains from the prepared data under the output root into `train/`.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome, CliError> {
    let root = cfg.output_dir();
    let prepared = read_prepared(&root)?;
    let policy = cfg.model.policy(prepared.vocab.len());
    policy
        .validate()
        .map_err(|e| CliError::Usage(format!("invalid model section: {e}")))?;
    let data = TrainData {
        vocab: prepared.vocab,
        train: prepared.train,
        validation: prepared.validation,
    };
    let opts = TrainOptions {
        out_dir: root.join(TRAIN_DIR),
        resume: resume.map(Path::to_path_buf),
    };
    cfg.echo()?;
    let outcome = with_precision!(cfg.precision()?, train(&cfg.train, policy, &data, &opts))?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub checkpoint: PathBuf,
    pub report: EvalReport,
    pub jsonl: PathBuf,
    pub table: PathBuf,
}

fn eval_as<T: Real>(cfg: &RunConfig, checkpoint: &Path) -> Result<EvalReport, CliError> {
    let prepared = read_prepared(&cfg.output_dir())?;
    let ck = load_checkpoint::<T>(checkpoint)?;
    if ck.vocab.hash() != prepared.vocab.hash() {
        return Err(CliError::Data(format!(
            "{} was trained on a different vocabulary than the prepared data",
            checkpoint.display()
        )));
    }
    let policy = &ck.models.policy;
    evaluate_model(
        policy,
        &ck.vocab,
        encode_limits(policy.config()),
        &prepared.test,
        &cfg.eval.seeds,
        cfg.eval.temperature,
    )
    .map_err(|e| CliError::Training(format!("evaluation failed: {e}")))
}

/// Evaluates a checkpoint (default `train/best.egail`) on the test split and
/// writes `eval/<checkpoint stem>.jsonl` and `.txt`.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    precision: Option<Precision>,
) -> Result<EvalOutcome, CliError> {
    let root = cfg.output_dir();
    let path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| root.join(TRAIN_DIR).join(crate::gail::BEST));
    let report = with_precision!(file_precision(&path, precision)?, eval_as(cfg, &path))?;
    let dir = root.join(EVAL_DIR);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    let jsonl = dir.join(format!("{stem}.jsonl"));
    let table = dir.join(format!("{stem}.txt"));
    fs::write(&jsonl, report.to_jsonl()).map_err(|e| CliError::io(&jsonl, e))?;
    fs::write(&table, report.to_table()).map_err(|e| CliError::io(&table, e))?;
    Ok(EvalOutcome {
        checkpoint: path,
        report,
        jsonl,
        table,
    })
}

fn summary_as<T: Real>(path: &Path) -> Result<String, CliError> {
    let ck = load_checkpoint::<T>(path)?;
    let m = &ck.models;
    let st = &ck.state;
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let mut s = String::new();
    let _ = writeln!(s, "checkpoint        {}", path.display());
    let _ = writeln!(s, "precision         {}-bit", T::PRECISION.bits());
    let _ = writeln!(s, "config hash       {}", ck.config.hash());
    let _ = writeln!(s, "vocabulary        {} tokens, hash {}", ck.vocab.len(), ck.config.vocab_hash);
    let _ = writeln!(s, "step              {}", st.global_step);
    let _ = writeln!(s, "epoch             {}", st.epoch);
    let _ = writeln!(s, "demo ratio        {:.4}", st.demo_ratio);
    let _ = writeln!(s, "initial val ppl   {}", opt(st.initial_val_perplexity));
    let _ = writeln!(
        s,
        "best val ppl      {} at step {}",
        opt(st.best_val_perplexity),
        st.best_step.map_or("-".into(), |x| x.to_string())
    );
    let _ = writeln!(
        s,
        "policy params     {} in {} tensors",
        m.policy.params().num_scalars(),
        m.policy.params().len()
    );
    let _ = writeln!(
        s,
        "disc params       {} in {} tensors",
        m.disc.params().num_scalars(),
        m.disc.params().len()
    );
    let _ = write!(
        s,
        "optimizer steps   generator {}, discriminator {}",
        m.gen_opt.adam.step, m.disc_opt.step
    );
    Ok(s)
}

/// Human-readable checkpoint header: config hash, step and parameter counts.
pub fn inspect_summary(path: &Path) -> Result<String, CliError> {
    with_precision!(file_precision(path, None)?, summary_as(path))
}

pub fn cmd_inspect(path: &Path) -> Result<String, CliError> {
    inspect_summary(path)
}

fn chat_as<T: Real, R: BufRead, W: Write>(
    path: &Path,
    temperature: f64,
    seed: u64,
    verbose: bool,
    input: R,
    output: W,
) -> Result<(), CliError> {
    let ck = load_checkpoint::<T>(path)?;
    let mut session = ChatSession::from_checkpoint(ck, temperature, seed)?;
    run_repl(&mut session, input, output, verbose).map_err(|e| CliError::Data(format!("terminal i/o: {e}")))
}

pub fn cmd_chat<R: BufRead, W: Write>(
    path: &Path,
    temperature: f64,
    seed: u64,
    verbose: bool,
    precision: Option<Precision>,
    input: R,
    output: W,
) -> Result<(), CliError> {
    match file_precision(path, precision)? {
        Precision::F32 => chat_as::<f32, R, W>(path, temperature, seed, verbose, input, output),
        Precision::F64 => chat_as::<f64, R, W>(path, temperature, seed, verbose, input, output),
    }
}

/// Trajectory counts per source for the configured inputs, without writing.
pub fn cmd_stats(cfg: &RunConfig) -> Result<String, CliError> {
    let gathered = gather_corpus(cfg)?;
    let c = corpus_stats(&gathered.conversations);
    let mut s = String::new();
    let _ = writeln!(s, "conversations        {}", c.conversations);
    let _ = writeln!(s, "tweets               {}", c.tweets);
    let _ = writeln!(s, "trajectories         {}", c.total_trajectories);
    let _ = writeln!(s, "  from conversations {}", c.conversation_trajectories);
    let _ = writeln!(s, "  from tweets        {}", c.tweet_trajectories);
    let _ = writeln!(s, "dropped utterances   {}", c.dropped_utterances);
    let _ = writeln!(s, "turns / conversation {:.3}", c.mean_turns);
    let _ = write!(s, "malformed lines      {}", gathered.malformed.len());
    Ok(s)
}
