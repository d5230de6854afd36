//! The eight emotional-support strategies and their reserved vocabulary tokens.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// A labeled support move attached to supporter turns.
///
/// The declaration order is fixed and determines the strategy token ids
/// (`Vocabulary::strategy_id`).
/// Serialized as its display name; any spelling accepted by `FromStr`
/// deserializes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Question,
    RestatementOrParaphrasing,
    ReflectionOfFeelings,
    SelfDisclosure,
    AffirmationAndReassurance,
    ProvidingSuggestions,
    Information,
    Others,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Question,
        Strategy::RestatementOrParaphrasing,
        Strategy::ReflectionOfFeelings,
        Strategy::SelfDisclosure,
        Strategy::AffirmationAndReassurance,
        Strategy::ProvidingSuggestions,
        Strategy::Information,
        Strategy::Others,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Strategy> {
        Self::ALL.get(i).copied()
    }

    /// Canonical name, as used in corpus files and the HTTP API.
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Question => "Question",
            Strategy::RestatementOrParaphrasing => "Restatement or Paraphrasing",
            Strategy::ReflectionOfFeelings => "Reflection of feelings",
            Strategy::SelfDisclosure => "Self-disclosure",
            Strategy::AffirmationAndReassurance => "Affirmation and Reassurance",
            Strategy::ProvidingSuggestions => "Providing Suggestions",
            Strategy::Information => "Information",
            Strategy::Others => "Others",
        }
    }

    /// The reserved vocabulary token for this strategy.
    pub fn token(self) -> &'static str {
        match self {
            Strategy::Question => "[question]",
            Strategy::RestatementOrParaphrasing => "[restatement]",
            Strategy::ReflectionOfFeelings => "[reflection]",
            Strategy::SelfDisclosure => "[self-disclosure]",
            Strategy::AffirmationAndReassurance => "[affirmation]",
            Strategy::ProvidingSuggestions => "[suggestions]",
            Strategy::Information => "[information]",
            Strategy::Others => "[others]",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn normalize(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

impl FromStr for Strategy {
    type Err = Error;

    /// Accepts the canonical name, the token, the enum identifier, or any
    /// spelling that matches after dropping case, spaces and punctuation
    /// ("Providing Suggestions", "ProvidingSuggestions", "providing-suggestions").
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = normalize(s);
        let aliases: &[(&str, Strategy)] = &[
            ("restatement", Strategy::RestatementOrParaphrasing),
            ("paraphrasing", Strategy::RestatementOrParaphrasing),
            ("reflection", Strategy::ReflectionOfFeelings),
            ("affirmation", Strategy::AffirmationAndReassurance),
            ("suggestions", Strategy::ProvidingSuggestions),
        ];
        for st in Strategy::ALL {
            if key == normalize(st.name()) || key == normalize(st.token()) || key == normalize(&format!("{st:?}")) {
                return Ok(st);
            }
        }
        aliases
            .iter()
            .find(|(a, _)| *a == key)
            .map(|(_, st)| *st)
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

impl Serialize for Strategy {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
