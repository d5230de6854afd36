//! Export of persona snapshots for manual quality labeling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnnotatedConversation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuditLabel {
    Reasonable,
    Contradictory,
    Hallucinatory,
    Others,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaAuditLabel {
    pub label: AuditLabel,
    #[serde(default)]
    pub note: Option<String>,
}

impl PersonaAuditLabel {
    /// A note is required for `Others` and forbidden otherwise.
    pub fn new(label: AuditLabel, note: Option<String>) -> Result<Self> {
        let has_note = note.as_deref().is_some_and(|n| !n.trim().is_empty());
        if has_note != (label == AuditLabel::Others) {
            return Err(Error::InvalidArgument(format!("label {label:?} with note {note:?}: note is required iff label is Others")));
        }
        Ok(PersonaAuditLabel { label, note })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSentence {
    pub sentence: String,
    pub source_utterance: usize,
    pub label: Option<PersonaAuditLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditItem {
    pub conversation: usize,
    pub turn: usize,
    pub persona: Vec<AuditSentence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditFile {
    pub format_version: String,
    pub labels: Vec<AuditLabel>,
    pub items: Vec<AuditItem>,
}

/// Samples `n` persona snapshots (conversation, turn) without replacement.
/// Items are emitted in (conversation, turn) order with unfilled label slots.
pub fn export_audit_sample(annotated: &[AnnotatedConversation], n: usize, seed: u64) -> Result<AuditFile> {
    let mut all: Vec<(usize, usize)> = annotated
        .iter()
        .enumerate()
        .flat_map(|(ci, a)| a.persona_at_turn.keys().map(move |&t| (ci, t)))
        .collect();
    if n > all.len() {
        return Err(Error::InvalidArgument(format!("requested {n} audit items but only {} snapshots exist", all.len())));
    }
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut picked = all[..n].to_vec();
    picked.sort_unstable();
    let items = picked
        .into_iter()
        .map(|(ci, turn)| AuditItem {
            conversation: ci,
            turn,
            persona: annotated[ci].persona_at_turn[&turn]
                .iter()
                .map(|(s, src)| AuditSentence {
                    sentence: s.to_string(),
                    source_utterance: src,
                    label: None,
                })
                .collect(),
        })
        .collect();
    Ok(AuditFile {
        format_version: crate::corpus::FORMAT_VERSION.to_string(),
        labels: vec![AuditLabel::Reasonable, AuditLabel::Contradictory, AuditLabel::Hallucinatory, AuditLabel::Others],
        items,
    })
}
