//! Multi-turn chat sessions: per-turn persona extraction over seeker
//! utterances, strategy prediction and contrastive generation, with every
//! session persisted after each completed turn.

mod http;
mod store;

pub use http::{router, serve};
pub use store::{JsonDirStore, MemoryStore, SessionStore};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::corpus::Speaker;
use crate::decode::{generate, AlphaTable, DecodeConfig};
use crate::error::{Error, Result};
use crate::hash::{fnv1a, fnv1a_extend};
use crate::model::Model;
use crate::persona::{snapshot_after, PersonaExtractor, PersonaSet};
use crate::strategy::Strategy;

/// Per-session changes to the service's decoding defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionOverrides {
    pub alpha_override: Option<f64>,
    pub alpha_table: Option<AlphaTable>,
    pub top_k: Option<usize>,
    pub top_p: Option<f64>,
    pub temperature: Option<f64>,
    pub repetition_penalty: Option<f64>,
    pub max_new_tokens: Option<usize>,
}

impl SessionOverrides {
    pub fn apply(&self, base: &DecodeConfig) -> DecodeConfig {
        let mut cfg = base.clone();
        if let Some(a) = self.alpha_override {
            cfg.alpha_override = Some(a);
        }
        if let Some(t) = self.alpha_table {
            cfg.alpha_table = t;
        }
        cfg.top_k = self.top_k.unwrap_or(cfg.top_k);
        cfg.top_p = self.top_p.unwrap_or(cfg.top_p);
        cfg.temperature = self.temperature.unwrap_or(cfg.temperature);
        cfg.repetition_penalty = self.repetition_penalty.unwrap_or(cfg.repetition_penalty);
        cfg.max_new_tokens = self.max_new_tokens.unwrap_or(cfg.max_new_tokens);
        cfg
    }
}

/// One utterance of a session transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTurn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_used: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub dialogue: Vec<SessionTurn>,
    /// Current persona, extracted from seeker turns only.
    pub persona: PersonaSet,
    /// Snapshot after each annotated seeker turn, keyed by utterance index.
    pub persona_history: BTreeMap<usize, PersonaSet>,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub updated_at: u64,
    pub overrides: SessionOverrides,
}

impl Session {
    fn seeker_turns(&self) -> Vec<(usize, &str)> {
        self.dialogue.iter().enumerate().filter(|(_, t)| t.speaker == Speaker::Seeker).map(|(i, t)| (i, t.text.as_str())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedStrategy {
    pub strategy: Strategy,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnResponse {
    pub response: String,
    pub strategy: Strategy,
    pub alpha_used: f64,
    pub forced: bool,
    pub persona: PersonaSet,
    pub top_strategies: Vec<RankedStrategy>,
    pub seed: u64,
    /// Utterance index of the supporter reply.
    pub turn: usize,
}

/// Default per-turn seed derived from the session id and turn index.
pub fn turn_seed(session_id: &str, turn: usize) -> u64 {
    fnv1a_extend(fnv1a(session_id.as_bytes()), &(turn as u64).to_le_bytes())
}

fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Shared state behind the CLI REPL and the HTTP API.
///
/// Turns on the same session are serialized by a per-session lock; distinct
/// sessions run in parallel over the shared frozen model.
pub struct ChatService {
    model: Arc<Model>,
    extractor: Arc<dyn PersonaExtractor>,
    store: Arc<dyn SessionStore>,
    decode: DecodeConfig,
    checkpoint: String,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

impl ChatService {
    /// Builds the service and indexes every session already in `store`.
    pub fn new(model: Arc<Model>, extractor: Arc<dyn PersonaExtractor>, store: Arc<dyn SessionStore>, decode: DecodeConfig, checkpoint: impl Into<String>) -> Result<Self> {
        decode.validate()?;
        let mut sessions = HashMap::new();
        for id in store.list()? {
            if let Some(s) = store.load(&id)? {
                sessions.insert(id, Arc::new(Mutex::new(s)));
            }
        }
        Ok(ChatService {
            model,
            extractor,
            store,
            decode,
            checkpoint: checkpoint.into(),
            sessions: RwLock::new(sessions),
        })
    }

    pub fn checkpoint(&self) -> &str {
        &self.checkpoint
    }

    pub fn create_session(&self, overrides: SessionOverrides) -> Result<Session> {
        overrides.apply(&self.decode).validate()?;
        let now = now_millis();
        let session = Session {
            id: uuid::Uuid::new_v4().simple().to_string(),
            dialogue: Vec::new(),
            persona: PersonaSet::new(),
            persona_history: BTreeMap::new(),
            created_at: now,
            updated_at: now,
            overrides,
        };
        self.store.save(&session)?;
        self.sessions.write().insert(session.id.clone(), Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    fn handle(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions.read().get(id).cloned().ok_or_else(|| Error::SessionNotFound(id.to_string()))
    }

    pub fn get_session(&self, id: &str) -> Result<Session> {
        Ok(self.handle(id)?.lock().clone())
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Appends the seeker message, refreshes the persona, generates and
    /// appends the supporter reply, then persists. On any failure the
    /// session, in memory and on disk, is left as it was.
    pub fn chat_turn(&self, id: &str, message: &str, seed: Option<u64>, strategy: Option<Strategy>) -> Result<TurnResponse> {
        let message = message.trim();
        if message.is_empty() {
            return Err(Error::InvalidArgument("message must not be empty".into()));
        }
        let handle = self.handle(id)?;
        let mut guard = handle.lock();
        let mut next = guard.clone();

        // consecutive seeker messages merge into one utterance, as in corpora
        match next.dialogue.last_mut() {
            Some(last) if last.speaker == Speaker::Seeker => {
                last.text.push(' ');
                last.text.push_str(message);
            }
            _ => next.dialogue.push(SessionTurn {
                speaker: Speaker::Seeker,
                text: message.to_string(),
                strategy: None,
                alpha_used: None,
                forced: false,
            }),
        }
        let seeker = next.seeker_turns();
        if let Some(snapshot) = snapshot_after(&seeker, self.extractor.as_ref()) {
            next.persona_history.insert(seeker.last().map_or(0, |t| t.0), snapshot.clone());
            next.persona = snapshot;
        }

        let turn = next.dialogue.len();
        let seed = seed.unwrap_or_else(|| turn_seed(&next.id, turn));
        let cfg = DecodeConfig {
            seed,
            ..next.overrides.apply(&self.decode)
        };
        let context: Vec<&str> = next.dialogue.iter().map(|t| t.text.as_str()).collect();
        let out = generate(&self.model, &context, &next.persona, &cfg, strategy)?;
        next.dialogue.push(SessionTurn {
            speaker: Speaker::Supporter,
            text: out.text.clone(),
            strategy: Some(out.strategy),
            alpha_used: Some(out.alpha_used),
            forced: strategy.is_some(),
        });
        next.updated_at = now_millis().max(next.updated_at);
        self.store.save(&next)?;

        let response = TurnResponse {
            response: out.text,
            strategy: out.strategy,
            alpha_used: out.alpha_used,
            forced: strategy.is_some(),
            persona: next.persona.clone(),
            top_strategies: out
                .strategy_ranking
                .iter()
                .take(3)
                .map(|&(strategy, probability)| RankedStrategy { strategy, probability })
                .collect(),
            seed,
            turn,
        };
        *guard = next;
        Ok(response)
    }
}
