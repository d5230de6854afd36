//! Conversion of annotated conversations into model inputs.
//!
//! Every strategy-labeled supporter turn becomes one [`Example`]: the
//! preceding utterances (most recent kept when truncating) as dialogue,
//! the latest persona snapshot before the turn as persona, and the turn's
//! strategy and text as target.

use crate::corpus::{Speaker, Vocabulary};
use crate::model::{join_with_sep, Example};
use crate::persona::{AnnotatedConversation, PersonaSet};

/// Utterances joined by SEP, dropping the oldest ones to fit `max_len`.
/// A single overlong utterance keeps its last `max_len` tokens.
pub fn encode_dialogue<S: AsRef<str>>(vocab: &Vocabulary, utterances: &[S], max_len: usize) -> Vec<usize> {
    let mut kept: Vec<Vec<usize>> = Vec::new();
    let mut used = 0;
    for u in utterances.iter().rev() {
        let ids = vocab.encode(u.as_ref());
        if ids.is_empty() {
            continue;
        }
        let extra = ids.len() + usize::from(!kept.is_empty());
        if used + extra > max_len {
            if kept.is_empty() {
                kept.push(ids[ids.len() - max_len..].to_vec());
            }
            break;
        }
        used += extra;
        kept.push(ids);
    }
    kept.reverse();
    join_with_sep(&kept, vocab.sep())
}

/// Persona sentences joined by SEP, keeping whole sentences in discovery
/// order while they fit in `max_len`.
pub fn encode_persona(vocab: &Vocabulary, persona: &PersonaSet, max_len: usize) -> Vec<usize> {
    let mut parts: Vec<Vec<usize>> = Vec::new();
    let mut used = 0;
    for s in persona.sentences() {
        let ids = vocab.encode(s);
        if ids.is_empty() {
            continue;
        }
        let extra = ids.len() + usize::from(!parts.is_empty());
        if used + extra > max_len {
            break;
        }
        used += extra;
        parts.push(ids);
    }
    join_with_sep(&parts, vocab.sep())
}

/// Response tokens truncated so that `[BOS, s] + response` fits `max_len`.
pub fn encode_response(vocab: &Vocabulary, text: &str, max_len: usize) -> Vec<usize> {
    let mut ids = vocab.encode(text);
    ids.truncate(max_len.saturating_sub(2));
    ids
}

/// A gold supporter turn together with everything needed to score a
/// generated replacement for it.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldTurn {
    pub conversation: usize,
    pub turn: usize,
    pub context: Vec<String>,
    pub persona: PersonaSet,
    pub response: String,
    pub example: Example,
}

pub fn gold_turns(annotated: &[AnnotatedConversation], vocab: &Vocabulary, max_len: usize) -> Vec<GoldTurn> {
    let mut out = Vec::new();
    for (ci, a) in annotated.iter().enumerate() {
        let turns = &a.base.turns;
        for (i, t) in turns.iter().enumerate() {
            let Some(strategy) = t.strategy else { continue };
            if i == 0 || t.speaker != Speaker::Supporter {
                continue;
            }
            let context: Vec<String> = turns[..i].iter().map(|u| u.text.clone()).collect();
            let persona = a.persona_before(i);
            let response = encode_response(vocab, &t.text, max_len);
            let dialogue = encode_dialogue(vocab, &context, max_len);
            if response.is_empty() || dialogue.is_empty() {
                continue;
            }
            out.push(GoldTurn {
                conversation: ci,
                turn: i,
                example: Example {
                    dialogue,
                    persona: encode_persona(vocab, &persona, max_len),
                    strategy,
                    response,
                },
                context,
                persona,
                response: t.text.clone(),
            });
        }
    }
    out
}

pub fn build_examples(annotated: &[AnnotatedConversation], vocab: &Vocabulary, max_len: usize) -> Vec<Example> {
    gold_turns(annotated, vocab, max_len).into_iter().map(|g| g.example).collect()
}
