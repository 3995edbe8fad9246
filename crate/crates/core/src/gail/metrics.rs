//! Line-delimited JSON metrics stream.
//!
//! Every line is one [`MetricsRecord`] tagged by `kind`. The stream holds no
//! wall-clock fields, so two runs with one seed write identical bytes.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CheckpointConfig, GailError};

/// Outcome of one adversarial step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// 1-based index of the completed step.
    pub step: u64,
    pub epoch: u64,
    pub demo_ratio: f64,
    pub expert_entries: usize,
    pub generated_entries: usize,
    /// Discriminator objective before its update.
    pub disc_objective: f64,
    pub mean_reward: f64,
    pub baseline: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub mean_ratio: f64,
    pub mean_entropy: f64,
    /// Generator learning rate at the last optimizer step.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: u64,
    pub epoch: u64,
    pub perplexity: f64,
    pub bleu: f64,
    pub clamped_tokens: usize,
    /// Whether this validation produced a new best checkpoint.
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricsRecord {
    Config {
        step: u64,
        config: CheckpointConfig,
    },
    Mle {
        step: u64,
        steps: u64,
        best_step: u64,
        final_train_loss: f64,
        validation: Vec<(u64, f64)>,
    },
    DiscPretrain {
        step: u64,
        steps: u64,
        first_objective: Option<f64>,
        last_objective: Option<f64>,
    },
    Step(StepMetrics),
    Validation(ValidationRecord),
}

impl MetricsRecord {
    pub fn step(&self) -> u64 {
        match self {
            MetricsRecord::Config { step, .. }
            | MetricsRecord::Mle { step, .. }
            | MetricsRecord::DiscPretrain { step, .. } => *step,
            MetricsRecord::Step(m) => m.step,
            MetricsRecord::Validation(v) => v.step,
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> GailError {
    GailError::Io(format!("{}: {e}", path.display()))
}

/// Single appender for the stream; each record is flushed as written.
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, GailError> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Keeps records up to and including `step` and appends after them.
    pub fn resume(path: &Path, step: u64) -> Result<Self, GailError> {
        let kept: Vec<MetricsRecord> = read_records(path)?
            .into_iter()
            .filter(|r| r.step() <= step)
            .collect();
        let mut w = Self::create(path)?;
        for r in &kept {
            w.write(r)?;
        }
        Ok(w)
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<(), GailError> {
        let line = serde_json::to_string(record).expect("metrics serialize");
        writeln!(self.file, "{line}").map_err(|e| io_err(&self.path, e))?;
        self.file.flush().map_err(|e| io_err(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn read_records(path: &Path) -> Result<Vec<MetricsRecord>, GailError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = OpenOptions::new().read(true).open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| GailError::Io(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
