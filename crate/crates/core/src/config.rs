//! TOML configuration with presets.
//!
//! Every section is optional and every key inside a section is optional;
//! missing values fall back to the defaults, or to the named training
//! preset. Command-line flags are applied on top by the caller.
//!
//! ```toml
//! [synth]                 # used by `corpus synth`
//! n_conversations = 50
//! n_turns = 6             # utterances per conversation, both speakers
//! vocab_seed_words = ["astronaut"]
//! seed = 0
//!
//! [corpus]
//! vocab_size = 2000       # maximum vocabulary size including specials
//! split_seed = 0
//!
//! [model]
//! d_model = 64
//! n_layers = 2
//!
//! [train]
//! preset = "desk"         # "desk" or "paper"; other keys override it
//! epochs = 40
//! grad_clip = 0.0         # non-positive disables clipping
//!
//! [decode]
//! top_k = 10
//! temperature = 0.5
//!
//! [decode.alpha_table]    # per-strategy α, by strategy name
//! "Providing Suggestions" = 0.5
//!
//! [serve]
//! host = "127.0.0.1"
//! port = 8080
//! store = "sessions"
//! ```

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::corpus::SynthConfig;
use crate::decode::DecodeConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSettings {
    pub vocab_size: usize,
    pub split_seed: u64,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        CorpusSettings { vocab_size: 2000, split_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSettings {
    pub host: String,
    pub port: u16,
    pub store: PathBuf,
}

impl Default for ServeSettings {
    fn default() -> Self {
        ServeSettings {
            host: "127.0.0.1".into(),
            port: 8080,
            store: PathBuf::from("sessions"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub synth: SynthConfig,
    pub corpus: CorpusSettings,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub serve: ServeSettings,
}

fn position(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn parse_error(text: &str, e: &toml::de::Error) -> Error {
    let (line, column) = e.span().map_or((0, 0), |s| position(text, s.start));
    Error::Parse {
        line,
        column,
        message: e.message().to_string(),
    }
}

fn section<T: for<'de> Deserialize<'de>>(text: &str, name: &str, value: toml::Value) -> Result<T> {
    T::deserialize(value).map_err(|e| {
        let mut err = parse_error(text, &e);
        if let Error::Parse { message, .. } = &mut err {
            *message = format!("[{name}] {message}");
        }
        err
    })
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
        let mut out = Settings::default();
        let mut take = |name: &str| table.remove(name);

        if let Some(v) = take("synth") {
            out.synth = section(text, "synth", v)?;
        }
        if let Some(v) = take("corpus") {
            out.corpus = section(text, "corpus", v)?;
        }
        if let Some(v) = take("model") {
            out.model = section(text, "model", v)?;
        }
        if let Some(v) = take("train") {
            let mut t = match v {
                toml::Value::Table(t) => t,
                _ => return Err(Error::InvalidArgument("[train] must be a table".into())),
            };
            let base = match t.remove("preset") {
                Some(toml::Value::String(name)) => TrainConfig::preset(&name)?,
                Some(_) => return Err(Error::InvalidArgument("train.preset must be a string".into())),
                None => TrainConfig::default(),
            };
            // overlay the given keys on the serialized preset
            let mut merged = toml::Table::try_from(&base).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            merged.extend(t);
            out.train = section(text, "train", toml::Value::Table(merged))?;
        }
        if let Some(v) = take("decode") {
            out.decode = section(text, "decode", v)?;
        }
        if let Some(v) = take("serve") {
            out.serve = section(text, "serve", v)?;
        }
        if let Some(unknown) = table.keys().next() {
            return Err(Error::InvalidArgument(format!("unknown config section [{unknown}]")));
        }
        out.model.validate()?;
        out.train.validate()?;
        out.decode.validate()?;
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Settings::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Defaults when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Settings::default()), Settings::load)
    }
}
