use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::trajectory::Trajectory;
use super::DataError;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SEP: usize = 3;
pub const UNK: usize = 4;
pub const NUM_RESERVED: usize = 5;

pub const SEP_LITERAL: &str = "<sep>";
const RESERVED: [&str; NUM_RESERVED] = ["<pad>", "<bos>", "<eos>", SEP_LITERAL, "<unk>"];

/// Lowercased word units with punctuation split off. Reserved literals such as
/// `<sep>` survive as single tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for piece in text.split_whitespace() {
        let lower = piece.to_lowercase();
        if RESERVED.contains(&lower.as_str()) {
            out.push(lower);
            continue;
        }
        let mut word = String::new();
        for ch in lower.chars() {
            if ch.is_alphanumeric() {
                word.push(ch);
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(ch.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Canonical spelling of a text: its tokens joined by single spaces.
pub fn normalize_text(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Word-level vocabulary with reserved ids `PAD=0, BOS=1, EOS=2, SEP=3, UNK=4`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds from a full id-ordered token list (reserved literals first).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, DataError> {
        if tokens.len() < NUM_RESERVED || tokens[..NUM_RESERVED] != RESERVED.map(String::from) {
            return Err(DataError::InvalidVocab("reserved tokens missing or out of order".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(DataError::InvalidVocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// A vocabulary holding exactly `words` after the reserved ids.
    pub fn with_words<S: AsRef<str>>(words: &[S]) -> Result<Self, DataError> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.iter().map(|w| w.as_ref().to_string()));
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    pub fn ids(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Renders ids as text, stopping at the first EOS and skipping PAD/BOS.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut words = Vec::new();
        for &id in ids {
            match id {
                EOS => break,
                PAD | BOS => continue,
                _ => words.push(self.token(id).unwrap_or(RESERVED[UNK])),
            }
        }
        words.join(" ")
    }

    /// Stable digest of the id-ordered token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update((t.len() as u64).to_le_bytes());
            h.update(t.as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Keeps the `max_size - 5` most frequent prompt/response tokens; ties go to
/// the lexicographically smaller token.
pub fn build_vocab(trajectories: &[Trajectory], max_size: usize) -> Result<Vocab, DataError> {
    if max_size <= NUM_RESERVED {
        return Err(DataError::InvalidVocab(format!(
            "max size {max_size} leaves no room for words (need at least {})",
            NUM_RESERVED + 1
        )));
    }
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for t in trajectories {
        for text in [&t.prompt, &t.response] {
            for tok in tokenize(text) {
                if !RESERVED.contains(&tok.as_str()) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
    }
    if counts.is_empty() {
        return Err(DataError::InvalidVocab("corpus has no tokens".into()));
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - NUM_RESERVED);
    let words: Vec<String> = ranked.into_iter().map(|(t, _)| t).collect();
    Vocab::with_words(&words)
}

/// Length caps applied when framing a trajectory as token ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeLimits {
    pub max_state: usize,
    pub max_response: usize,
}

/// Token framing of one trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncodedPair {
    /// `BOS, history…, SEP, prompt…, SEP` with history utterances separated by `SEP`.
    pub state: Vec<usize>,
    /// `response…, EOS`
    pub target: Vec<usize>,
}

/// Frames the state and target. The state is truncated from the left, dropping
/// the oldest history first while keeping `BOS` and the prompt frame; the
/// target is truncated from the right.
pub fn encode(traj: &Trajectory, vocab: &Vocab, limits: EncodeLimits) -> EncodedPair {
    let mut history = Vec::new();
    for (i, u) in traj.history.iter().enumerate() {
        if i > 0 {
            history.push(SEP);
        }
        history.extend(vocab.ids(u));
    }
    let mut prompt = vocab.ids(&traj.prompt);

    let max_state = limits.max_state.max(4);
    let frame = 3; // BOS + two SEP
    if prompt.len() + frame > max_state {
        let keep = max_state - frame;
        prompt.drain(..prompt.len() - keep);
        history.clear();
    }
    let room = max_state - frame - prompt.len();
    if history.len() > room {
        history.drain(..history.len() - room);
    }

    let mut state = Vec::with_capacity(history.len() + prompt.len() + frame);
    state.push(BOS);
    state.extend(history);
    state.push(SEP);
    state.extend(prompt);
    state.push(SEP);

    let mut target = vocab.ids(&traj.response);
    target.push(EOS);
    target.truncate(limits.max_response.max(1));
    EncodedPair { state, target }
}
