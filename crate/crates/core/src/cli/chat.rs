//! Interactive dialogue against a checkpoint.
//!
//! The session keeps the conversation as plain utterances and frames every
//! turn through the same `Trajectory` and `encode` path used for training
//! data, so the state at turn k equals the training-time state of the k-th
//! trajectory of the same conversation.

use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discriminator::{reward_from_score, Discriminator};
use crate::eval::TurnBucket;
use crate::gail::{encode_limits, Checkpoint};
use crate::numcore::Real;
use crate::policy::{sample_response, Policy};
use crate::textdata::{
    encode, normalize_text, tokenize, EncodeLimits, SourceTag, Trajectory, Vocab, EOS, UNK,
};

use super::CliError;

/// Result of one exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatTurn {
    /// The equivalent training trajectory, with the sampled response.
    pub trajectory: Trajectory,
    pub state: Vec<usize>,
    /// Sampled ids, including EOS when the policy emitted it.
    pub response: Vec<usize>,
    pub text: String,
    pub bucket: TurnBucket,
    /// Discriminator probability that the pair is generated.
    pub score: f64,
    /// Input words outside the vocabulary, encoded as UNK.
    pub unknown: Vec<String>,
}

pub struct ChatSession<T: Real> {
    policy: Policy<T>,
    disc: Discriminator<T>,
    vocab: Vocab,
    limits: EncodeLimits,
    temperature: f64,
    rng: ChaCha8Rng,
    history: Vec<String>,
}

impl<T: Real> ChatSession<T> {
    pub fn new(
        policy: Policy<T>,
        disc: Discriminator<T>,
        vocab: Vocab,
        temperature: f64,
        seed: u64,
    ) -> Result<Self, CliError> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(CliError::Usage(format!("temperature must be positive, got {temperature}")));
        }
        let limits = encode_limits(policy.config());
        Ok(ChatSession {
            policy,
            disc,
            vocab,
            limits,
            temperature,
            rng: ChaCha8Rng::seed_from_u64(seed),
            history: Vec::new(),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint<T>, temperature: f64, seed: u64) -> Result<Self, CliError> {
        Self::new(ck.models.policy, ck.models.disc, ck.vocab, temperature, seed)
    }

    /// Completed utterances, oldest first, in normalized spelling.
    pub fn history(&self) -> &[String] {
        &self.history
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }

    /// The trajectory whose encoding is the state for `prompt` at this point.
    pub fn trajectory_for(&self, prompt: &str) -> Trajectory {
        Trajectory {
            conversation_id: "chat".into(),
            turn: self.history.len() / 2,
            history: self.history.clone(),
            prompt: normalize_text(prompt),
            response: String::new(),
            source: SourceTag::Conversation,
        }
    }

    pub fn unknown_words(&self, text: &str) -> Vec<String> {
        tokenize(text)
            .into_iter()
            .filter(|t| self.vocab.id(t) == UNK)
            .collect()
    }

    /// Samples a reply. A reply that is empty after decoding is returned but
    /// not added to the history, because a turn without a response has no
    /// training-time counterpart.
    pub fn respond(&mut self, prompt: &str) -> Result<ChatTurn, CliError> {
        let mut trajectory = self.trajectory_for(prompt);
        if trajectory.prompt.is_empty() {
            return Err(CliError::Usage("empty prompt".into()));
        }
        let state = encode(&trajectory, &self.vocab, self.limits).state;
        let z: u64 = self.rng.gen();
        let g = sample_response(&self.policy, &state, z, self.temperature)
            .map_err(|e| CliError::Training(e.to_string()))?;
        let pair = crate::textdata::EncodedPair {
            state: state.clone(),
            target: g.response.clone(),
        };
        let score = self
            .disc
            .score(&pair)
            .map_err(|e| CliError::Training(e.to_string()))?;
        let text = self.vocab.decode(&g.response);
        let bucket = TurnBucket::of(&trajectory);
        trajectory.response = text.clone();
        if !text.is_empty() {
            self.history.push(trajectory.prompt.clone());
            self.history.push(text.clone());
        }
        Ok(ChatTurn {
            unknown: self.unknown_words(prompt),
            trajectory,
            state,
            response: g.response,
            text,
            bucket,
            score,
        })
    }
}

/// Line-oriented loop: one utterance per line, `/reset` clears the history,
/// `/quit` or end of input exits.
pub fn run_repl<T: Real, R: BufRead, W: Write>(
    session: &mut ChatSession<T>,
    input: R,
    mut output: W,
    verbose: bool,
) -> io::Result<()> {
    writeln!(output, "type a message; /reset clears the history, /quit exits")?;
    for line in input.lines() {
        let line = line?;
        let msg = line.trim();
        match msg {
            "" => continue,
            "/quit" => break,
            "/reset" => {
                session.reset();
                writeln!(output, "[history cleared]")?;
                continue;
            }
            _ => {}
        }
        let turn = match session.respond(msg) {
            Ok(t) => t,
            Err(e) => {
                writeln!(output, "[error: {e}]")?;
                continue;
            }
        };
        if !turn.unknown.is_empty() {
            writeln!(output, "[unknown words mapped to <unk>: {}]", turn.unknown.join(", "))?;
        }
        let shown = if turn.text.is_empty() { "<no response>" } else { &turn.text };
        writeln!(output, "bot> {shown}")?;
        if verbose {
            let ended = turn.response.last() == Some(&EOS);
            writeln!(
                output,
                "[bucket {}, D(generated) {:.4}, reward {:.4}, state {} tokens{}]",
                turn.bucket.label(),
                turn.score,
                reward_from_score(turn.score),
                turn.state.len(),
                if ended { "" } else { ", truncated" }
            )?;
        }
    }
    output.flush()
}
