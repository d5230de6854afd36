use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::HashMap;

use super::Corpus;
use crate::error::{Error, Result};
use crate::strategy::Strategy;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const SEP: &str = "<sep>";
pub const UNK: &str = "<unk>";

/// 5 structural specials followed by the 8 strategy tokens.
pub const NUM_SPECIALS: usize = 13;

/// Id of the first strategy token; strategy `s` maps to
/// `FIRST_STRATEGY_ID + s.index()` in every vocabulary.
pub const FIRST_STRATEGY_ID: usize = 5;

/// Lowercases, splits on whitespace, and splits punctuation into separate
/// tokens. Apostrophes between letters stay inside the word ("i'm").
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.to_lowercase().split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let mut cur = String::new();
        for (i, &c) in chars.iter().enumerate() {
            let inner_apostrophe = (c == '\'' || c == '’')
                && i > 0
                && i + 1 < chars.len()
                && chars[i - 1].is_alphanumeric()
                && chars[i + 1].is_alphanumeric();
            if c.is_alphanumeric() || inner_apostrophe {
                cur.push(if c == '’' { '\'' } else { c });
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Joins tokens with spaces, attaching closing punctuation to the previous word.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for t in tokens {
        let t = t.as_ref();
        let attach = matches!(t, "." | "," | "!" | "?" | ";" | ":" | ")");
        if !out.is_empty() && !attach {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from the given ordinary tokens; specials are
    /// prepended and any duplicates or special collisions are dropped.
    pub fn from_tokens<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = [PAD, BOS, EOS, SEP, UNK].iter().map(|s| s.to_string()).collect();
        tokens.extend(Strategy::ALL.iter().map(|s| s.token().to_string()));
        let mut index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        for w in words {
            let w = w.into();
            if !index.contains_key(&w) {
                index.insert(w.clone(), tokens.len());
                tokens.push(w);
            }
        }
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad(&self) -> usize {
        0
    }
    pub fn bos(&self) -> usize {
        1
    }
    pub fn eos(&self) -> usize {
        2
    }
    pub fn sep(&self) -> usize {
        3
    }
    pub fn unk(&self) -> usize {
        4
    }

    pub fn strategy_id(&self, s: Strategy) -> usize {
        FIRST_STRATEGY_ID + s.index()
    }

    pub fn strategy_of(&self, id: usize) -> Option<Strategy> {
        id.checked_sub(FIRST_STRATEGY_ID).and_then(Strategy::from_index)
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < NUM_SPECIALS
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.unk())
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(UNK)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Detokenizes ids, dropping specials.
    pub fn decode(&self, ids: &[usize]) -> String {
        let words: Vec<&str> = ids.iter().filter(|&&i| !self.is_special(i)).map(|&i| self.token(i)).collect();
        detokenize(&words)
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tokens: Vec<String> = Vec::deserialize(d)?;
        let expected = Vocabulary::from_tokens(Vec::<String>::new());
        if tokens.len() < NUM_SPECIALS || tokens[..NUM_SPECIALS] != expected.tokens[..] {
            return Err(serde::de::Error::custom("vocabulary does not start with the reserved specials"));
        }
        let v = Vocabulary::from_tokens(tokens[NUM_SPECIALS..].iter().cloned());
        if v.len() != tokens.len() {
            return Err(serde::de::Error::custom("vocabulary contains duplicate tokens"));
        }
        Ok(v)
    }
}

/// Specials first, then corpus tokens by descending frequency with ties
/// broken lexicographically, truncated to `max_size` entries in total.
pub fn build_vocab(corpus: &Corpus, max_size: usize) -> Result<Vocabulary> {
    if max_size < NUM_SPECIALS + 1 {
        return Err(Error::InvalidArgument(format!(
            "max_size {max_size} leaves no room after {NUM_SPECIALS} specials"
        )));
    }
    let specials = Vocabulary::from_tokens(Vec::<String>::new());
    let mut counts: HashMap<String, usize> = HashMap::new();
    for conv in &corpus.conversations {
        for turn in &conv.turns {
            for tok in tokenize(&turn.text) {
                if specials.get(&tok).is_none() {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - NUM_SPECIALS);
    Ok(Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t)))
}
