//! Deterministic pattern-table extractor.
//!
//! Each seeker utterance is split into sentences and then into clauses at
//! connectives that introduce a new first-person subject ("... and i feel
//! sad"). A clause qualifies when, after leading fillers and adverbs are
//! removed, it starts with one of the patterns below, checked in order:
//!
//! | kind        | prefixes                                              |
//! |-------------|-------------------------------------------------------|
//! | occupation  | `i work as`, `i am studying to be`, `i'm studying to be` |
//! | affect      | `i feel`, `i am feeling`, `i'm feeling`, `i felt`     |
//! | possession  | `i have`, `i've got`, `i've`                          |
//! | copula      | `i am`, `i'm`                                         |
//!
//! The emitted sentence is the lowercased clause without fillers, adverbs
//! or trailing punctuation, so "I'm just feeling anxious about my job's
//! future." becomes "i'm feeling anxious about my job's future".

use super::{PersonaExtractor, PersonaSet};
use crate::corpus::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    Occupation,
    Affect,
    Possession,
    Copula,
}

const PATTERNS: &[(PatternKind, &[&str])] = &[
    (PatternKind::Occupation, &["i", "work", "as"]),
    (PatternKind::Occupation, &["i", "am", "studying", "to", "be"]),
    (PatternKind::Occupation, &["i'm", "studying", "to", "be"]),
    (PatternKind::Affect, &["i", "feel"]),
    (PatternKind::Affect, &["i", "am", "feeling"]),
    (PatternKind::Affect, &["i'm", "feeling"]),
    (PatternKind::Affect, &["i", "felt"]),
    (PatternKind::Possession, &["i", "have"]),
    (PatternKind::Possession, &["i've", "got"]),
    (PatternKind::Possession, &["i've"]),
    (PatternKind::Copula, &["i", "am"]),
    (PatternKind::Copula, &["i'm"]),
];

const FILLERS: &[&str] = &[
    "hello", "hi", "hey", "well", "so", "yes", "yeah", "oh", "um", "uh", "honestly", "actually", "also", "ok", "okay", "and", "but",
];

const ADVERBS: &[&str] = &["just", "really", "also", "actually", "still", "currently", "now", "kind", "sort", "of"];

const CONNECTIVES: &[&str] = &["and", "but", "so", "because", "though", "while"];

const SENTENCE_END: &[&str] = &[".", "!", "?", ";"];

fn is_first_person(word: &str) -> bool {
    matches!(word, "i" | "i'm" | "i've")
}

/// Splits tokens into clauses at sentence ends, commas and connectives that
/// are followed by a first-person subject.
fn clauses(tokens: &[String]) -> Vec<Vec<&str>> {
    let mut out = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    for (i, tok) in tokens.iter().enumerate() {
        let t = tok.as_str();
        let next_first_person = tokens.get(i + 1).is_some_and(|n| is_first_person(n));
        if SENTENCE_END.contains(&t) || t == "," || (CONNECTIVES.contains(&t) && next_first_person) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            continue;
        }
        if t.chars().all(|c| !c.is_alphanumeric()) {
            continue;
        }
        cur.push(t);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Strips leading fillers and adverbs directly after the subject/auxiliary.
fn normalize_clause<'a>(clause: &[&'a str]) -> Vec<&'a str> {
    let start = clause.iter().position(|w| !FILLERS.contains(w)).unwrap_or(clause.len());
    let words = &clause[start..];
    if words.first().is_none_or(|w| !is_first_person(w)) {
        return Vec::new();
    }
    let mut out = vec![words[0]];
    let mut i = 1;
    // "i am just", "i'm really" and similar: drop adverbs in the verb group
    if words.get(1) == Some(&"am") {
        out.push("am");
        i = 2;
    }
    while i < words.len() && ADVERBS.contains(&words[i]) {
        i += 1;
    }
    out.extend_from_slice(&words[i..]);
    out
}

fn match_pattern(words: &[&str]) -> Option<PatternKind> {
    PATTERNS
        .iter()
        .find(|(_, prefix)| words.len() > prefix.len() && words[..prefix.len()] == **prefix)
        .map(|(kind, _)| *kind)
}

/// Returns every qualifying clause of one utterance together with its pattern kind.
pub fn extract_from_utterance(text: &str) -> Vec<(PatternKind, String)> {
    let tokens = tokenize(text);
    clauses(&tokens)
        .iter()
        .filter_map(|c| {
            let words = normalize_clause(c);
            match_pattern(&words).map(|kind| (kind, words.join(" ")))
        })
        .collect()
}

/// Runs the pattern table over each utterance in order; provenance is the
/// index into `seeker_utterances`.
pub fn rule_extract<S: AsRef<str>>(seeker_utterances: &[S]) -> PersonaSet {
    let mut set = PersonaSet::new();
    for (i, u) in seeker_utterances.iter().enumerate() {
        for (_, sentence) in extract_from_utterance(u.as_ref()) {
            set.insert(sentence, i);
        }
    }
    set
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleExtractor;

impl PersonaExtractor for RuleExtractor {
    fn extract(&self, seeker_utterances: &[String]) -> PersonaSet {
        rule_extract(seeker_utterances)
    }

    fn name(&self) -> &str {
        "rule"
    }
}
