//! Corpus ingestion, tokenization and expert-trajectory construction.

mod corpus;
mod split;
mod synth;
mod trajectory;
mod vocab;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corpus::{
    normalize_whitespace, parse_corpus, parse_corpus_str, write_corpus, Conversation, CorpusFormat,
    LineError, ParsedCorpus, SourceTag,
};
pub use split::{split_dataset, DatasetSplit, MIN_CONVERSATIONS};
pub use synth::{expected_response, synth_corpus, SynthSpec, CUE_TEMPLATES};
pub use trajectory::{build_trajectories, Trajectory, TrajectorySet};
pub use vocab::{
    build_vocab, encode, normalize_text, tokenize, EncodeLimits, EncodedPair, Vocab, BOS, EOS,
    NUM_RESERVED, PAD, SEP, SEP_LITERAL, UNK,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{path} contains no valid records ({} malformed lines)", errors.len())]
    EmptyCorpus { path: String, errors: Vec<LineError> },
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("need at least {needed} conversations to split, found {found}")]
    TooFewConversations { found: usize, needed: usize },
}

/// Per-source trajectory counts for a prepared corpus.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub conversations: usize,
    pub tweets: usize,
    pub conversation_trajectories: usize,
    pub tweet_trajectories: usize,
    pub total_trajectories: usize,
    pub dropped_utterances: usize,
    /// Mean turns per non-tweet conversation.
    pub mean_turns: f64,
}

pub fn corpus_stats(conversations: &[Conversation]) -> CorpusStats {
    let set = build_trajectories(conversations);
    let convs = conversations
        .iter()
        .filter(|c| c.source != SourceTag::Tweet)
        .count();
    let tweets = conversations.len() - convs;
    let tweet_trajs = set
        .trajectories
        .iter()
        .filter(|t| t.source == SourceTag::Tweet)
        .count();
    let conv_trajs = set.trajectories.len() - tweet_trajs;
    CorpusStats {
        conversations: convs,
        tweets,
        conversation_trajectories: conv_trajs,
        tweet_trajectories: tweet_trajs,
        total_trajectories: set.trajectories.len(),
        dropped_utterances: set.dropped_utterances,
        mean_turns: if convs == 0 {
            0.0
        } else {
            conv_trajs as f64 / convs as f64
        },
    }
}
