//! Conversation data model, the versioned JSON corpus format, vocabulary,
//! deterministic splitting and a synthetic corpus generator.
//!
//! Corpus files look like
//!
//! ```json
//! {"format_version": "1",
//!  "conversations": [{"situation": "...", "scores": null,
//!    "turns": [{"speaker": "seeker", "strategy": null, "text": "hello"}]}]}
//! ```
//!
//! Consecutive turns from the same speaker are merged on load (texts joined
//! by a single space) so that loaded conversations always alternate.

mod split;
mod synth;
mod vocab;

pub use split::{parse_ratio, split_corpus, split_corpus_ratio};
pub use synth::{generate_synthetic, SynthConfig};
pub use vocab::{build_vocab, detokenize, tokenize, Vocabulary, FIRST_STRATEGY_ID, NUM_SPECIALS};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::strategy::Strategy;

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Seeker,
    Supporter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    #[serde(default)]
    pub strategy: Option<Strategy>,
    pub text: String,
}

impl Utterance {
    pub fn seeker(text: impl Into<String>) -> Self {
        Utterance {
            speaker: Speaker::Seeker,
            strategy: None,
            text: text.into(),
        }
    }

    pub fn supporter(text: impl Into<String>, strategy: Option<Strategy>) -> Self {
        Utterance {
            speaker: Speaker::Supporter,
            strategy,
            text: text.into(),
        }
    }
}

/// Worker-assigned quality scores, each on a 1..=5 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scores {
    pub empathy: u8,
    pub relevance: u8,
    pub intensity_before: u8,
    pub intensity_after: u8,
}

impl Scores {
    /// Decrease in emotional intensity over the conversation.
    pub fn intensity_decrease(&self) -> i32 {
        self.intensity_before as i32 - self.intensity_after as i32
    }

    fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [
            ("empathy", self.empathy),
            ("relevance", self.relevance),
            ("intensity_before", self.intensity_before),
            ("intensity_after", self.intensity_after),
        ] {
            if !(1..=5).contains(&v) {
                return Err(format!("score {name}={v} outside 1..=5"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    #[serde(default)]
    pub situation: String,
    #[serde(default)]
    pub scores: Option<Scores>,
    pub turns: Vec<Utterance>,
}

impl Conversation {
    /// Merges same-speaker runs and checks invariants.
    pub fn new(situation: impl Into<String>, turns: Vec<Utterance>, scores: Option<Scores>) -> std::result::Result<Self, String> {
        let turns = merge_consecutive(turns);
        let conv = Conversation {
            situation: situation.into(),
            scores,
            turns,
        };
        conv.validate()?;
        Ok(conv)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.turns.len() < 2 {
            return Err(format!("needs at least 2 turns, found {}", self.turns.len()));
        }
        for (i, t) in self.turns.iter().enumerate() {
            if t.text.trim().is_empty() {
                return Err(format!("turn {i} has empty text"));
            }
            if t.strategy.is_some() && t.speaker != Speaker::Supporter {
                return Err(format!("turn {i} is a seeker turn with a strategy label"));
            }
            if i > 0 && self.turns[i - 1].speaker == t.speaker {
                return Err(format!("turns {} and {i} share a speaker", i - 1));
            }
        }
        if let Some(s) = &self.scores {
            s.validate()?;
        }
        Ok(())
    }

    /// Seeker texts in order, paired with their global utterance index.
    pub fn seeker_turns(&self) -> impl Iterator<Item = (usize, &str)> {
        self.turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.speaker == Speaker::Seeker)
            .map(|(i, t)| (i, t.text.as_str()))
    }
}

fn merge_consecutive(turns: Vec<Utterance>) -> Vec<Utterance> {
    let mut out: Vec<Utterance> = Vec::with_capacity(turns.len());
    for t in turns {
        match out.last_mut() {
            Some(prev) if prev.speaker == t.speaker => {
                prev.text = format!("{} {}", prev.text.trim_end(), t.text.trim_start());
                if prev.strategy.is_none() {
                    prev.strategy = t.strategy;
                }
            }
            _ => out.push(t),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub format_version: String,
    pub conversations: Vec<Conversation>,
}

impl Corpus {
    pub fn new(conversations: Vec<Conversation>) -> Self {
        Corpus {
            format_version: FORMAT_VERSION.to_string(),
            conversations,
        }
    }

    pub fn len(&self) -> usize {
        self.conversations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conversations.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawCorpus = serde_json::from_str(text)?;
        let conversations = raw
            .conversations
            .into_iter()
            .enumerate()
            .map(|(index, c)| c.into_conversation(index).map(|(conv, _)| conv))
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            format_version: raw.format_version,
            conversations,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)?;
    Corpus::from_json(&text)
}

/// On-disk record shared by plain corpora and persona-annotated corpora.
#[derive(Debug, Deserialize)]
pub(crate) struct RawCorpus {
    #[serde(default = "default_version")]
    pub format_version: String,
    pub conversations: Vec<RawConversation>,
}

fn default_version() -> String {
    FORMAT_VERSION.to_string()
}

#[derive(Debug, Deserialize)]
pub(crate) struct RawConversation {
    #[serde(default)]
    situation: String,
    #[serde(default)]
    scores: Option<Scores>,
    turns: Vec<Utterance>,
    #[serde(default)]
    persona_at_turn: Option<BTreeMap<usize, Vec<String>>>,
    #[serde(default)]
    persona_provenance: Option<BTreeMap<usize, Vec<usize>>>,
}

/// Persona snapshots as stored on disk, with optional per-sentence source
/// utterances.
pub(crate) type RawPersona = (Option<BTreeMap<usize, Vec<String>>>, Option<BTreeMap<usize, Vec<usize>>>);

impl RawConversation {
    pub(crate) fn into_conversation(self, index: usize) -> Result<(Conversation, RawPersona)> {
        let conv = Conversation::new(self.situation, self.turns, self.scores).map_err(|reason| Error::Validation { index, reason })?;
        Ok((conv, (self.persona_at_turn, self.persona_provenance)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FOUR_TURNS: &str = r#"{"format_version": "1", "conversations": [{
        "situation": "job loss", "scores": null,
        "turns": [
            {"speaker": "seeker", "strategy": null, "text": "hello"},
            {"speaker": "supporter", "strategy": "Question", "text": "how are you?"},
            {"speaker": "seeker", "text": "i am sad"},
            {"speaker": "supporter", "strategy": null, "text": "i hear you"}
        ]}]}"#;

    #[test]
    fn loads_alternating_conversation() {
        let c = Corpus::from_json(FOUR_TURNS).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.conversations[0].turns.len(), 4);
        assert_eq!(c.conversations[0].turns[1].strategy, Some(Strategy::Question));
    }

    #[test]
    fn merges_consecutive_seeker_turns() {
        let text = r#"{"format_version": "1", "conversations": [{"situation": "", "turns": [
            {"speaker": "seeker", "text": "hi"},
            {"speaker": "seeker", "text": "i lost my job"},
            {"speaker": "supporter", "strategy": "Question", "text": "what happened?"}
        ]}]}"#;
        let c = Corpus::from_json(text).unwrap();
        let turns = &c.conversations[0].turns;
        assert_eq!(turns.len(), 2);
        assert_eq!(turns[0], Utterance::seeker("hi i lost my job"));
    }

    #[test]
    fn malformed_json_reports_line() {
        let err = Corpus::from_json("{\n\"conversations\": [\n  {\"turns\": 5}\n]}").unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("invalid type"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn seeker_strategy_is_rejected_with_index() {
        let text = r#"{"conversations": [
            {"turns": [{"speaker": "seeker", "text": "a"}, {"speaker": "supporter", "text": "b"}]},
            {"turns": [{"speaker": "seeker", "strategy": "Question", "text": "a"}, {"speaker": "supporter", "text": "b"}]}
        ]}"#;
        match Corpus::from_json(text).unwrap_err() {
            Error::Validation { index, .. } => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_short_and_blank() {
        let one = r#"{"conversations": [{"turns": [{"speaker": "seeker", "text": "a"}]}]}"#;
        assert!(matches!(Corpus::from_json(one), Err(Error::Validation { index: 0, .. })));
        let blank = r#"{"conversations": [{"turns": [{"speaker": "seeker", "text": "  "}, {"speaker": "supporter", "text": "b"}]}]}"#;
        assert!(matches!(Corpus::from_json(blank), Err(Error::Validation { .. })));
        let bad_score = r#"{"conversations": [{"scores": {"empathy": 6, "relevance": 1, "intensity_before": 1, "intensity_after": 1},
            "turns": [{"speaker": "seeker", "text": "a"}, {"speaker": "supporter", "text": "b"}]}]}"#;
        assert!(matches!(Corpus::from_json(bad_score), Err(Error::Validation { .. })));
    }

    #[test]
    fn save_then_load_round_trips() {
        let c = Corpus::from_json(FOUR_TURNS).unwrap();
        let again = Corpus::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(c, again);
    }
}
