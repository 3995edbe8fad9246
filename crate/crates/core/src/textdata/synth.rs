//! Seeded synthetic empathetic corpus: every prompt carries one cue word and
//! the expert response is the fixed template for that cue.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{Conversation, SourceTag};

/// Cue word and the expert response it calls for.
pub const CUE_TEMPLATES: [(&str, &str); 8] = [
    ("loss", "i am so sorry to hear that"),
    ("promotion", "congratulations , you really earned it"),
    ("exam", "good luck , you will do great"),
    ("storm", "please stay safe and keep warm"),
    ("puppy", "how wonderful , enjoy your new friend"),
    ("argument", "that sounds hard , i hope you make up soon"),
    ("trip", "have a great time on your travels"),
    ("illness", "i hope you feel better soon"),
];

const PROMPT_TEMPLATES: [&str; 6] = [
    "i just had a {} today",
    "yesterday there was a {} in my family",
    "my whole week was about the {}",
    "i keep thinking about the {}",
    "we talked about the {} at dinner",
    "there is news about the {} again",
];

const TWEETS: [&str; 5] = [
    "be kind to yourself today",
    "every small step forward still counts",
    "breathe in calm and breathe out worry",
    "you are stronger than you think",
    "rest is part of the journey",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub conversations: usize,
    /// Turns per conversation are uniform in `[min_turns, max_turns]`.
    pub min_turns: usize,
    pub max_turns: usize,
    #[serde(default)]
    pub tweets: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            conversations: 120,
            min_turns: 1,
            max_turns: 3,
            tweets: 0,
            seed: 7,
        }
    }
}

/// The template response for the single cue word in `prompt`, if any.
pub fn expected_response(prompt: &str) -> Option<&'static str> {
    let words: Vec<&str> = prompt.split_whitespace().collect();
    let hits: Vec<&'static str> = CUE_TEMPLATES
        .iter()
        .filter(|(cue, _)| words.contains(cue))
        .map(|(_, r)| *r)
        .collect();
    match hits.as_slice() {
        [one] => Some(one),
        _ => None,
    }
}

pub fn synth_corpus(spec: &SynthSpec) -> Vec<Conversation> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = (spec.min_turns.max(1), spec.max_turns.max(spec.min_turns.max(1)));
    let mut out = Vec::with_capacity(spec.conversations + spec.tweets);
    for i in 0..spec.conversations {
        let turns = rng.gen_range(lo..=hi);
        let mut cues: Vec<usize> = Vec::with_capacity(turns);
        let mut utterances = Vec::with_capacity(2 * turns);
        for k in 0..turns {
            let cue = if k > 0 && rng.gen_bool(0.5) {
                cues[rng.gen_range(0..cues.len())]
            } else {
                rng.gen_range(0..CUE_TEMPLATES.len())
            };
            cues.push(cue);
            let template = PROMPT_TEMPLATES[rng.gen_range(0..PROMPT_TEMPLATES.len())];
            utterances.push(template.replace("{}", CUE_TEMPLATES[cue].0));
            utterances.push(CUE_TEMPLATES[cue].1.to_string());
        }
        let label = Some(CUE_TEMPLATES[cues[0]].0.to_string());
        out.push(
            Conversation::new(format!("synth-{i:06}"), label, utterances, SourceTag::Conversation)
                .expect("templates are non-empty"),
        );
    }
    for i in 0..spec.tweets {
        let text = TWEETS[rng.gen_range(0..TWEETS.len())];
        out.push(
            Conversation::new(format!("synth-tweet-{i:06}"), None, vec![text.into()], SourceTag::Tweet)
                .expect("tweets are non-empty"),
        );
    }
    out
}
