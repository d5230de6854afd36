use parking_lot::Mutex;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::Session;
use crate::error::{Error, Result};

/// Durable session storage. Implementations must make `save` atomic: a
/// failed save leaves the previously stored document untouched.
pub trait SessionStore: Send + Sync {
    fn load(&self, id: &str) -> Result<Option<Session>>;
    fn save(&self, session: &Session) -> Result<()>;
    fn list(&self) -> Result<Vec<String>>;
}

/// Ids double as file names, so only a conservative alphabet is allowed.
fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.len() > 64 || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(Error::SessionNotFound(id.to_string()));
    }
    Ok(())
}

/// One pretty-printed JSON document per session, replaced via rename.
#[derive(Debug, Clone)]
pub struct JsonDirStore {
    dir: PathBuf,
}

impl JsonDirStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(JsonDirStore { dir })
    }

    pub fn path_of(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl SessionStore for JsonDirStore {
    fn load(&self, id: &str) -> Result<Option<Session>> {
        check_id(id)?;
        match std::fs::read_to_string(self.path_of(id)) {
            Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn save(&self, session: &Session) -> Result<()> {
        check_id(&session.id)?;
        let tmp = self.dir.join(format!(".{}.json.tmp", session.id));
        std::fs::write(&tmp, serde_json::to_vec_pretty(session)?)?;
        std::fs::rename(&tmp, self.path_of(&session.id))?;
        Ok(())
    }

    fn list(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(id) = name.strip_suffix(".json") {
                if !id.starts_with('.') && check_id(id).is_ok() {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}

/// Volatile store for tests and the terminal REPL.
#[derive(Debug, Default)]
pub struct MemoryStore {
    docs: Mutex<BTreeMap<String, String>>,
}

impl MemoryStore {
    /// The stored JSON document of a session.
    pub fn raw(&self, id: &str) -> Option<String> {
        self.docs.lock().get(id).cloned()
    }
}

impl SessionStore for MemoryStore {
    fn load(&self, id: &str) -> Result<Option<Session>> {
        self.docs.lock().get(id).map(|d| serde_json::from_str(d).map_err(Error::from)).transpose()
    }

    fn save(&self, session: &Session) -> Result<()> {
        let doc = serde_json::to_string(session)?;
        self.docs.lock().insert(session.id.clone(), doc);
        Ok(())
    }

    fn list(&self) -> Result<Vec<String>> {
        Ok(self.docs.lock().keys().cloned().collect())
    }
}
