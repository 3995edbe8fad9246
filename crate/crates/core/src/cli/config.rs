//! Declarative run configuration. Flags override file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gail::TrainConfig;
use crate::numcore::Precision;
use crate::policy::PolicyConfig;
use crate::textdata::SynthSpec;

use super::CliError;

/// Environment variable naming the output root when the config has none.
pub const OUTPUT_DIR_ENV: &str = "EGAIL_OUTPUT_DIR";
/// Output root used when neither the config nor the environment names one.
pub const DEFAULT_OUTPUT_DIR: &str = "egail-out";
/// File the resolved configuration is echoed to inside the output root.
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Line-delimited conversation files.
    pub conversations: Vec<PathBuf>,
    /// Line-delimited tweet files.
    pub tweets: Vec<PathBuf>,
    /// Synthetic conversations appended after the file corpora.
    pub synth: Option<SynthSpec>,
    /// Vocabulary size including the five reserved tokens.
    pub max_vocab: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            conversations: Vec::new(),
            tweets: Vec::new(),
            synth: None,
            max_vocab: 2000,
        }
    }
}

/// Policy shape; the vocabulary size comes from the prepared vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_context: usize,
    pub max_response: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let p = PolicyConfig::for_vocab(0);
        ModelConfig {
            embed_dim: p.embed_dim,
            layers: p.layers,
            heads: p.heads,
            ff_dim: p.ff_dim,
            max_context: p.max_context,
            max_response: p.max_response,
            dropout: p.dropout,
            layer_norm_eps: p.layer_norm_eps,
        }
    }
}

impl ModelConfig {
    pub fn policy(&self, vocab_size: usize) -> PolicyConfig {
        PolicyConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            layers: self.layers,
            heads: self.heads,
            ff_dim: self.ff_dim,
            max_context: self.max_context,
            max_response: self.max_response,
            dropout: self.dropout,
            layer_norm_eps: self.layer_norm_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// One BLEU sample per seed; three or more give a standard deviation.
    pub seeds: Vec<u64>,
    pub temperature: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seeds: vec![1, 2, 3],
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed: drives the split and overrides `train.seed`.
    pub seed: u64,
    /// 32 or 64.
    pub precision: u8,
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            precision: 32,
            output_dir: None,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub precision: Option<Precision>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    /// Reads `path`, applies overrides and makes relative data paths relative
    /// to the config file's directory.
    pub fn load(path: &Path, overrides: Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base, overrides, std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
    }

    /// Fills every implicit value so that the result reproduces the run on its own.
    pub fn resolve(
        mut self,
        base: &Path,
        overrides: Overrides,
        env_output: Option<PathBuf>,
    ) -> Result<Self, CliError> {
        if let Some(s) = overrides.seed {
            self.seed = s;
        }
        if let Some(p) = overrides.precision {
            self.precision = p.bits();
        }
        self.precision()?;
        self.train.seed = self.seed;
        let rebase = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        self.data.conversations = self.data.conversations.iter().map(rebase).collect();
        self.data.tweets = self.data.tweets.iter().map(rebase).collect();
        let out = match (&self.output_dir, env_output) {
            (Some(p), _) => rebase(p),
            (None, Some(p)) => p,
            (None, None) => PathBuf::from(DEFAULT_OUTPUT_DIR),
        };
        self.output_dir = Some(out);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.data.conversations.is_empty() && self.data.tweets.is_empty() && self.data.synth.is_none() {
            return usage("config names no data: set data.conversations, data.tweets or data.synth".into());
        }
        if self.data.max_vocab < crate::textdata::NUM_RESERVED + 1 {
            return usage(format!("data.max_vocab must be at least 6, got {}", self.data.max_vocab));
        }
        if self.eval.seeds.is_empty() {
            return usage("eval.seeds must not be empty".into());
        }
        if !(self.eval.temperature > 0.0 && self.eval.temperature.is_finite()) {
            return usage(format!("eval.temperature must be positive, got {}", self.eval.temperature));
        }
        self.train
            .validate()
            .map_err(|e| CliError::Usage(format!("invalid train section: {e}")))?;
        self.model
            .policy(crate::textdata::NUM_RESERVED + 1)
            .validate()
            .map_err(|e| CliError::Usage(format!("invalid model section: {e}")))
    }

    pub fn precision(&self) -> Result<Precision, CliError> {
        Precision::from_bits(self.precision)
            .ok_or_else(|| CliError::Usage(format!("precision must be 32 or 64, got {}", self.precision)))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Writes the resolved configuration into the output root.
    pub fn echo(&self) -> Result<PathBuf, CliError> {
        let dir = self.output_dir();
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let path = dir.join(RESOLVED_CONFIG);
        std::fs::write(&path, self.to_toml()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
