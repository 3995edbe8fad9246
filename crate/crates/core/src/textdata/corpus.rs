use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

/// Where a conversation or trajectory came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Conversation,
    Tweet,
    Generated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Conversations,
    Tweets,
}

/// A two-speaker transcript; the first utterance belongs to the prompter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub label: Option<String>,
    pub utterances: Vec<String>,
    pub source: SourceTag,
}

impl Conversation {
    pub fn new(
        id: impl Into<String>,
        label: Option<String>,
        utterances: Vec<String>,
        source: SourceTag,
    ) -> Result<Self, String> {
        let utterances: Vec<String> = utterances.iter().map(|u| normalize_whitespace(u)).collect();
        if utterances.is_empty() {
            return Err("conversation has no utterances".into());
        }
        if let Some(i) = utterances.iter().position(|u| u.is_empty()) {
            return Err(format!("utterance {i} is empty"));
        }
        Ok(Conversation {
            id: id.into(),
            label,
            utterances,
            source,
        })
    }
}

pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

/// Result of reading one corpus file: valid records plus per-line failures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCorpus {
    pub conversations: Vec<Conversation>,
    pub errors: Vec<LineError>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConversationRecord {
    id: String,
    #[serde(default)]
    label: Option<String>,
    utterances: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TweetRecord {
    id: String,
    text: String,
}

/// Reads a line-delimited corpus file.
pub fn parse_corpus(path: &Path, format: CorpusFormat) -> Result<ParsedCorpus, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let parsed = parse_corpus_str(&text, format);
    if parsed.conversations.is_empty() {
        return Err(DataError::EmptyCorpus {
            path: path.display().to_string(),
            errors: parsed.errors,
        });
    }
    Ok(parsed)
}

/// Parses corpus text; blank lines are skipped.
pub fn parse_corpus_str(text: &str, format: CorpusFormat) -> ParsedCorpus {
    let mut conversations = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = match format {
            CorpusFormat::Conversations => serde_json::from_str::<ConversationRecord>(line)
                .map_err(|e| e.to_string())
                .and_then(|r| {
                    Conversation::new(r.id, r.label, r.utterances, SourceTag::Conversation)
                }),
            CorpusFormat::Tweets => serde_json::from_str::<TweetRecord>(line)
                .map_err(|e| e.to_string())
                .and_then(|r| Conversation::new(r.id, None, vec![r.text], SourceTag::Tweet)),
        };
        match rec {
            Ok(c) => conversations.push(c),
            Err(message) => errors.push(LineError {
                line: i + 1,
                message,
            }),
        }
    }
    ParsedCorpus {
        conversations,
        errors,
    }
}

/// Serializes conversations back to the line-delimited schema of their source.
pub fn write_corpus(conversations: &[Conversation]) -> String {
    let mut out = String::new();
    for c in conversations {
        let line = match c.source {
            SourceTag::Tweet => serde_json::json!({"id": c.id, "text": c.utterances[0]}),
            _ => match &c.label {
                Some(l) => serde_json::json!({"id": c.id, "label": l, "utterances": c.utterances}),
                None => serde_json::json!({"id": c.id, "utterances": c.utterances}),
            },
        };
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}
