use serde::{Deserialize, Serialize};

use super::corpus::{Conversation, SourceTag};
use super::vocab::SEP_LITERAL;

/// One imitation unit: the state (history, prompt) and the action (response).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trajectory {
    pub conversation_id: String,
    /// 0-based turn index inside the conversation.
    pub turn: usize,
    /// Utterances preceding this turn, oldest first.
    pub history: Vec<String>,
    pub prompt: String,
    pub response: String,
    pub source: SourceTag,
}

impl Trajectory {
    /// The history as a single string with separator literals between utterances.
    pub fn history_text(&self) -> String {
        self.history.join(&format!(" {SEP_LITERAL} "))
    }

    /// Number of complete prompt/response turns held in the history.
    pub fn prior_turns(&self) -> usize {
        self.history.len().div_ceil(2)
    }
}

/// Trajectories plus the count of trailing prompts that had no response.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrajectorySet {
    pub trajectories: Vec<Trajectory>,
    pub dropped_utterances: usize,
}

/// Staggers each conversation into one trajectory per turn. Tweets become a
/// single trajectory whose prompt and response are both the tweet text.
pub fn build_trajectories(conversations: &[Conversation]) -> TrajectorySet {
    let mut out = TrajectorySet::default();
    for conv in conversations {
        if conv.source == SourceTag::Tweet {
            let text = &conv.utterances[0];
            out.trajectories.push(Trajectory {
                conversation_id: conv.id.clone(),
                turn: 0,
                history: Vec::new(),
                prompt: text.clone(),
                response: text.clone(),
                source: SourceTag::Tweet,
            });
            out.dropped_utterances += conv.utterances.len() - 1;
            continue;
        }
        let turns = conv.utterances.len() / 2;
        for k in 0..turns {
            out.trajectories.push(Trajectory {
                conversation_id: conv.id.clone(),
                turn: k,
                history: conv.utterances[..2 * k].to_vec(),
                prompt: conv.utterances[2 * k].clone(),
                response: conv.utterances[2 * k + 1].clone(),
                source: conv.source,
            });
        }
        out.dropped_utterances += conv.utterances.len() % 2;
    }
    out
}
