use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

use super::{PersonaExtractor, PersonaSet};
use crate::corpus::{Conversation, Corpus, RawCorpus, Scores, Utterance, FORMAT_VERSION};
use crate::error::{Error, Result};

/// 0-based index of the third utterance; earlier utterances are greetings
/// and are never annotated.
pub const FIRST_ANNOTATED_UTTERANCE: usize = 2;

/// A conversation with cumulative persona snapshots keyed by the global
/// utterance index of each seeker turn.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedConversation {
    pub base: Conversation,
    pub persona_at_turn: BTreeMap<usize, PersonaSet>,
}

impl AnnotatedConversation {
    /// The most recent snapshot taken at or before utterance `turn`.
    pub fn persona_before(&self, turn: usize) -> PersonaSet {
        self.persona_at_turn.range(..=turn).next_back().map(|(_, p)| p.clone()).unwrap_or_default()
    }

    /// Checks that each snapshot contains all earlier ones.
    pub fn is_monotone(&self) -> bool {
        let snaps: Vec<&PersonaSet> = self.persona_at_turn.values().collect();
        snaps.windows(2).all(|w| w[0].is_subset_of(w[1]))
    }
}

/// Persona after the last of `seeker_turns`, given as (utterance index,
/// text) pairs in order. `None` when that turn comes before the first
/// annotated utterance. Provenance refers to utterance indices.
pub fn snapshot_after<S: AsRef<str>>(seeker_turns: &[(usize, S)], extractor: &dyn PersonaExtractor) -> Option<PersonaSet> {
    let &(pos, _) = seeker_turns.last()?;
    if pos < FIRST_ANNOTATED_UTTERANCE {
        return None;
    }
    let texts: Vec<String> = seeker_turns.iter().map(|(_, t)| t.as_ref().to_string()).collect();
    Some(extractor.extract(&texts).remap_provenance(|i| seeker_turns.get(i).map_or(pos, |(p, _)| *p)))
}

/// For every seeker turn from the third utterance on, runs `extractor` over
/// all seeker utterances up to and including that turn.
pub fn annotate_conversation(conv: &Conversation, extractor: &dyn PersonaExtractor) -> AnnotatedConversation {
    let mut seeker: Vec<(usize, &str)> = Vec::new();
    let mut persona_at_turn = BTreeMap::new();
    for turn in conv.seeker_turns() {
        seeker.push(turn);
        if let Some(snapshot) = snapshot_after(&seeker, extractor) {
            persona_at_turn.insert(turn.0, snapshot);
        }
    }
    AnnotatedConversation {
        base: conv.clone(),
        persona_at_turn,
    }
}

/// Annotates every conversation of a corpus.
pub fn annotate_corpus(corpus: &Corpus, extractor: &dyn PersonaExtractor) -> Vec<AnnotatedConversation> {
    corpus.conversations.iter().map(|c| annotate_conversation(c, extractor)).collect()
}

#[derive(Serialize)]
struct PesconvOut<'a> {
    format_version: &'static str,
    conversations: Vec<PesconvConvOut<'a>>,
}

#[derive(Serialize)]
struct PesconvConvOut<'a> {
    situation: &'a str,
    scores: &'a Option<Scores>,
    turns: &'a [Utterance],
    persona_at_turn: BTreeMap<usize, &'a [String]>,
    persona_provenance: BTreeMap<usize, &'a [usize]>,
}

pub fn pesconv_to_json(annotated: &[AnnotatedConversation]) -> Result<String> {
    let out = PesconvOut {
        format_version: FORMAT_VERSION,
        conversations: annotated
            .iter()
            .map(|a| PesconvConvOut {
                situation: &a.base.situation,
                scores: &a.base.scores,
                turns: &a.base.turns,
                persona_at_turn: a.persona_at_turn.iter().map(|(k, v)| (*k, v.sentences())).collect(),
                persona_provenance: a.persona_at_turn.iter().map(|(k, v)| (*k, v.provenance())).collect(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&out)?)
}

pub fn save_pesconv(annotated: &[AnnotatedConversation], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, pesconv_to_json(annotated)?)?;
    Ok(())
}

/// Parses a persona-annotated corpus. When `persona_provenance` is absent,
/// provenance falls back to the first snapshot in which a sentence appears.
pub fn parse_pesconv(text: &str) -> Result<Vec<AnnotatedConversation>> {
    let raw: RawCorpus = serde_json::from_str(text)?;
    raw.conversations
        .into_iter()
        .enumerate()
        .map(|(index, rc)| {
            let (base, (map, provenance)) = rc.into_conversation(index)?;
            let provenance = provenance.unwrap_or_default();
            let mut persona_at_turn = BTreeMap::new();
            let mut seen = PersonaSet::new();
            for (turn, sentences) in map.unwrap_or_default() {
                if turn >= base.turns.len() {
                    return Err(Error::Validation {
                        index,
                        reason: format!("persona annotation for utterance {turn} beyond conversation end"),
                    });
                }
                for s in &sentences {
                    seen.insert(s.clone(), turn);
                }
                let stored = provenance.get(&turn);
                if stored.is_some_and(|p| p.len() != sentences.len()) {
                    return Err(Error::Validation {
                        index,
                        reason: format!("persona provenance at utterance {turn} does not match its sentences"),
                    });
                }
                let mut snap = PersonaSet::new();
                for (k, s) in sentences.into_iter().enumerate() {
                    let src = match stored {
                        Some(p) => p[k],
                        None => seen.iter().find(|(x, _)| x.eq_ignore_ascii_case(&s)).map(|(_, p)| p).unwrap_or(turn),
                    };
                    snap.insert(s, src);
                }
                persona_at_turn.insert(turn, snap);
            }
            Ok(AnnotatedConversation { base, persona_at_turn })
        })
        .collect()
}

pub fn load_pesconv(path: impl AsRef<Path>) -> Result<Vec<AnnotatedConversation>> {
    parse_pesconv(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthConfig};
    use crate::persona::{rule_extract, RuleExtractor};

    fn seeker_fixture() -> Conversation {
        Conversation::new(
            "job anxiety",
            vec![
                Utterance::seeker("Hello"),
                Utterance::supporter("Hi there! How may I support you today?", None),
                Utterance::seeker("I'm just feeling anxious about my job's future. A lot of my colleagues are having trouble getting their licenses because of covid which means we won't be able to work."),
                Utterance::supporter("That must be hard. COVID has turned our world upside down! What type of occupation are you in?", None),
                Utterance::seeker("I'm studying to be a pharmacist."),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn fixture_pattern() {
        let a = annotate_conversation(&seeker_fixture(), &RuleExtractor);
        assert_eq!(a.persona_at_turn.keys().copied().collect::<Vec<_>>(), vec![2, 4]);
        let third = &a.persona_at_turn[&2];
        assert_eq!(third.sentences(), &["i'm feeling anxious about my job's future"]);
        let fifth = &a.persona_at_turn[&4];
        assert_eq!(fifth.sentences(), &["i'm feeling anxious about my job's future", "i'm studying to be a pharmacist"]);
        assert_eq!(fifth.provenance(), &[2, 4]);
        assert!(a.persona_before(1).is_empty());
        assert_eq!(a.persona_before(3), *third);
    }

    #[test]
    fn two_utterances_have_no_annotation() {
        let conv = Conversation::new("", vec![Utterance::seeker("i am a plumber"), Utterance::supporter("ok", None)], None).unwrap();
        assert!(annotate_conversation(&conv, &RuleExtractor).persona_at_turn.is_empty());
    }

    #[test]
    fn repeated_fact_gives_equal_snapshots() {
        let turns = (0..8)
            .map(|i| if i % 2 == 0 { Utterance::seeker("i am a plumber .") } else { Utterance::supporter("go on", None) })
            .collect();
        let conv = Conversation::new("", turns, None).unwrap();
        let a = annotate_conversation(&conv, &RuleExtractor);
        let seekers: Vec<String> = conv.seeker_turns().map(|(_, t)| t.to_string()).collect();
        for (k, (&turn, snap)) in a.persona_at_turn.iter().enumerate() {
            // oracle: rule_extract on the growing seeker prefix
            let expected = rule_extract(&seekers[..k + 2]);
            assert_eq!(snap.sentences(), expected.sentences(), "turn {turn}");
        }
        let snaps: Vec<_> = a.persona_at_turn.values().collect();
        assert!(snaps.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn pesconv_round_trip() {
        let corpus = generate_synthetic(&SynthConfig {
            n_conversations: 4,
            n_turns: 7,
            seed: 2,
            ..Default::default()
        });
        let annotated: Vec<_> = corpus.conversations.iter().map(|c| annotate_conversation(c, &RuleExtractor)).collect();
        let back = parse_pesconv(&pesconv_to_json(&annotated).unwrap()).unwrap();
        assert_eq!(back, annotated);
    }

    #[test]
    fn pesconv_rejects_out_of_range_turn() {
        let text = r#"{"conversations": [{"turns": [{"speaker": "seeker", "text": "a"}, {"speaker": "supporter", "text": "b"}],
            "persona_at_turn": {"9": ["i am a plumber"]}}]}"#;
        assert!(matches!(parse_pesconv(text), Err(Error::Validation { index: 0, .. })));
    }
}
