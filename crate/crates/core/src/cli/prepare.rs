//! Corpus ingestion into tokenized splits, a vocabulary and a stats report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::textdata::{
    build_trajectories, build_vocab, corpus_stats, normalize_text, parse_corpus, split_dataset,
    synth_corpus, Conversation, CorpusFormat, CorpusStats, LineError, Trajectory, Vocab,
};

use super::{CliError, RunConfig};

pub const DATA_DIR: &str = "data";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const STATS_FILE: &str = "stats.json";
/// Split files in `train, test, validation` order.
pub const SPLIT_FILES: [&str; 3] = ["train.jsonl", "test.jsonl", "validation.jsonl"];

/// Every conversation named by the config plus the lines that failed to parse.
#[derive(Debug, Clone, PartialEq)]
pub struct GatheredCorpus {
    pub conversations: Vec<Conversation>,
    pub malformed: Vec<(PathBuf, LineError)>,
}

pub fn gather_corpus(cfg: &RunConfig) -> Result<GatheredCorpus, CliError> {
    let mut out = GatheredCorpus {
        conversations: Vec::new(),
        malformed: Vec::new(),
    };
    let sources = cfg
        .data
        .conversations
        .iter()
        .map(|p| (p, CorpusFormat::Conversations))
        .chain(cfg.data.tweets.iter().map(|p| (p, CorpusFormat::Tweets)));
    for (path, format) in sources {
        let parsed = parse_corpus(path, format)?;
        out.conversations.extend(parsed.conversations);
        out.malformed
            .extend(parsed.errors.into_iter().map(|e| (path.clone(), e)));
    }
    if let Some(spec) = &cfg.data.synth {
        out.conversations.extend(synth_corpus(spec));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareStats {
    pub corpus: CorpusStats,
    pub malformed_lines: usize,
    pub train: usize,
    pub test: usize,
    pub validation: usize,
    pub vocab_size: usize,
}

impl PrepareStats {
    pub fn render(&self) -> String {
        let c = &self.corpus;
        let mut s = String::new();
        let _ = writeln!(s, "conversations        {}", c.conversations);
        let _ = writeln!(s, "tweets               {}", c.tweets);
        let _ = writeln!(s, "trajectories         {}", c.total_trajectories);
        let _ = writeln!(s, "  from conversations {}", c.conversation_trajectories);
        let _ = writeln!(s, "  from tweets        {}", c.tweet_trajectories);
        let _ = writeln!(s, "dropped utterances   {}", c.dropped_utterances);
        let _ = writeln!(s, "turns / conversation {:.3}", c.mean_turns);
        let _ = writeln!(s, "malformed lines      {}", self.malformed_lines);
        let _ = writeln!(
            s,
            "split                {} / {} / {} (train / test / validation)",
            self.train, self.test, self.validation
        );
        let _ = write!(s, "vocabulary           {}", self.vocab_size);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareOutcome {
    pub dir: PathBuf,
    pub stats: PrepareStats,
    pub malformed: Vec<(PathBuf, LineError)>,
}

/// The artifacts of a prepare run read back from disk.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: Vocab,
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
    pub validation: Vec<Trajectory>,
    pub stats: PrepareStats,
}

fn normalized(t: &Trajectory) -> Trajectory {
    Trajectory {
        history: t.history.iter().map(|u| normalize_text(u)).collect(),
        prompt: normalize_text(&t.prompt),
        response: normalize_text(&t.response),
        ..t.clone()
    }
}

fn jsonl(trajs: &[Trajectory]) -> String {
    let mut s = String::new();
    for t in trajs {
        s.push_str(&serde_json::to_string(t).expect("trajectory serializes"));
        s.push('\n');
    }
    s
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Parses every input, splits by conversation, builds the vocabulary from
/// the training split and writes `data/` under the output root. Inputs are
/// read in full before anything is written, and the directory is swapped in
/// by rename, so a failed run leaves no partial artifacts.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<PrepareOutcome, CliError> {
    let gathered = gather_corpus(cfg)?;
    let set = build_trajectories(&gathered.conversations);
    let trajs: Vec<Trajectory> = set.trajectories.iter().map(normalized).collect();
    let split = split_dataset(&trajs, cfg.seed)?;
    let vocab = build_vocab(&split.train, cfg.data.max_vocab)?;
    let stats = PrepareStats {
        corpus: corpus_stats(&gathered.conversations),
        malformed_lines: gathered.malformed.len(),
        train: split.train.len(),
        test: split.test.len(),
        validation: split.validation.len(),
        vocab_size: vocab.len(),
    };

    let root = cfg.output_dir();
    let dir = root.join(DATA_DIR);
    let staging = root.join(format!("{DATA_DIR}.tmp"));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
    for (name, part) in SPLIT_FILES.iter().zip([&split.train, &split.test, &split.validation]) {
        write(&staging.join(name), &jsonl(part))?;
    }
    let mut vocab_text = vocab.tokens().join("\n");
    vocab_text.push('\n');
    write(&staging.join(VOCAB_FILE), &vocab_text)?;
    let mut stats_text = serde_json::to_string_pretty(&stats).expect("stats serialize");
    stats_text.push('\n');
    write(&staging.join(STATS_FILE), &stats_text)?;
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    fs::rename(&staging, &dir).map_err(|e| CliError::io(&dir, e))?;
    cfg.echo()?;
    Ok(PrepareOutcome {
        dir,
        stats,
        malformed: gathered.malformed,
    })
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| {
        CliError::Data(format!(
            "{}: {e} (run `egail prepare` first)",
            path.display()
        ))
    })
}

fn read_split(path: &Path) -> Result<Vec<Trajectory>, CliError> {
    read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn read_prepared(output_dir: &Path) -> Result<Prepared, CliError> {
    let dir = output_dir.join(DATA_DIR);
    let tokens: Vec<String> = read(&dir.join(VOCAB_FILE))?.lines().map(String::from).collect();
    let vocab = Vocab::from_tokens(tokens)?;
    let stats_path = dir.join(STATS_FILE);
    let stats = serde_json::from_str(&read(&stats_path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", stats_path.display())))?;
    Ok(Prepared {
        vocab,
        train: read_split(&dir.join(SPLIT_FILES[0]))?,
        test: read_split(&dir.join(SPLIT_FILES[1]))?,
        validation: read_split(&dir.join(SPLIT_FILES[2]))?,
        stats,
    })
}
