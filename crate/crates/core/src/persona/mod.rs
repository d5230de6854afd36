//! Persona inference over seeker utterances and incremental corpus annotation.

mod annotate;
mod audit;
mod rules;

pub use annotate::{annotate_conversation, annotate_corpus, load_pesconv, parse_pesconv, pesconv_to_json, save_pesconv, snapshot_after, AnnotatedConversation, FIRST_ANNOTATED_UTTERANCE};
pub use audit::{export_audit_sample, AuditFile, AuditItem, AuditLabel, AuditSentence, PersonaAuditLabel};
pub use rules::{extract_from_utterance, rule_extract, PatternKind, RuleExtractor};

use serde::{Deserialize, Serialize};

/// Ordered persona sentences with the index of the utterance that produced each.
///
/// Sentences are unique under case-insensitive comparison and kept in
/// discovery order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaSet {
    sentences: Vec<String>,
    provenance: Vec<usize>,
}

impl PersonaSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts unless an equal (case-insensitive) sentence is present.
    /// Returns whether the sentence was new.
    pub fn insert(&mut self, sentence: impl Into<String>, source: usize) -> bool {
        let sentence = sentence.into();
        if self.contains(&sentence) {
            return false;
        }
        self.sentences.push(sentence);
        self.provenance.push(source);
        true
    }

    pub fn contains(&self, sentence: &str) -> bool {
        let key = sentence.to_lowercase();
        self.sentences.iter().any(|s| s.to_lowercase() == key)
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    pub fn provenance(&self) -> &[usize] {
        &self.provenance
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.sentences.iter().map(String::as_str).zip(self.provenance.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn is_subset_of(&self, other: &PersonaSet) -> bool {
        self.sentences.iter().all(|s| other.contains(s))
    }

    /// Rewrites provenance through `map` (e.g. seeker-list index to utterance index).
    pub fn remap_provenance(mut self, map: impl Fn(usize) -> usize) -> Self {
        for p in &mut self.provenance {
            *p = map(*p);
        }
        self
    }
}

/// Infers persona sentences from the seeker's own utterances.
///
/// Implementations only ever receive seeker text; supporter turns are
/// filtered out by callers.
pub trait PersonaExtractor: Send + Sync {
    fn extract(&self, seeker_utterances: &[String]) -> PersonaSet;

    fn name(&self) -> &str {
        "custom"
    }
}

impl<T: PersonaExtractor + ?Sized> PersonaExtractor for std::sync::Arc<T> {
    fn extract(&self, seeker_utterances: &[String]) -> PersonaSet {
        (**self).extract(seeker_utterances)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}
