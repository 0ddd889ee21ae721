//! Record/replay store keyed by a digest of template id, rendered prompt and temperature.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LlmError, LlmRequest};

/// Persisted form of one recorded response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub key: String,
    pub request_digest: String,
    pub response_text: String,
}

pub fn replay_key(template_id: &str, rendered_prompt: &str, temperature: f64) -> String {
    let mut h = Sha256::new();
    h.update(template_id.as_bytes());
    h.update([0u8]);
    h.update(rendered_prompt.as_bytes());
    h.update([0u8]);
    h.update(format!("{temperature:.4}").as_bytes());
    hex::encode(h.finalize())
}

/// Digest of the whole request, including fields that do not take part in the key.
pub fn request_digest(req: &LlmRequest) -> String {
    let json = serde_json::to_vec(req).expect("request serializes");
    hex::encode(Sha256::digest(json))
}

#[derive(Debug, Default)]
struct Slot {
    request_digest: String,
    responses: Vec<String>,
    cursor: usize,
}

/// Ordered responses per key; each lookup consumes the next one.
#[derive(Debug, Default)]
pub struct ReplayStore {
    slots: Mutex<BTreeMap<String, Slot>>,
}

impl ReplayStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let store = Self::new();
        if !path.exists() {
            return Ok(store);
        }
        let file = fs::File::open(path).map_err(|e| LlmError::Store(format!("{}: {e}", path.display())))?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| LlmError::Store(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry = serde_json::from_str(&line)
                .map_err(|e| LlmError::Store(format!("{} line {}: {e}", path.display(), i + 1)))?;
            store.push(entry);
        }
        Ok(store)
    }

    pub fn push(&self, entry: ReplayEntry) {
        let mut slots = self.slots.lock().expect("replay store poisoned");
        let slot = slots.entry(entry.key).or_default();
        slot.request_digest = entry.request_digest;
        slot.responses.push(entry.response_text);
    }

    /// Next unconsumed response for `key`.
    pub fn next(&self, key: &str) -> Option<String> {
        let mut slots = self.slots.lock().expect("replay store poisoned");
        let slot = slots.get_mut(key)?;
        let out = slot.responses.get(slot.cursor).cloned();
        if out.is_some() {
            slot.cursor += 1;
        }
        out
    }

    /// Appends a response and marks it consumed (used while recording).
    pub fn record(&self, key: &str, request_digest: &str, response_text: &str) {
        let mut slots = self.slots.lock().expect("replay store poisoned");
        let slot = slots.entry(key.to_string()).or_default();
        slot.request_digest = request_digest.to_string();
        slot.responses.push(response_text.to_string());
        slot.cursor = slot.responses.len();
    }

    pub fn rewind(&self) {
        for slot in self.slots.lock().expect("replay store poisoned").values_mut() {
            slot.cursor = 0;
        }
    }

    pub fn len(&self) -> usize {
        self.slots.lock().expect("replay store poisoned").values().map(|s| s.responses.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> Vec<ReplayEntry> {
        let slots = self.slots.lock().expect("replay store poisoned");
        slots
            .iter()
            .flat_map(|(k, s)| {
                s.responses.iter().map(move |r| ReplayEntry {
                    key: k.clone(),
                    request_digest: s.request_digest.clone(),
                    response_text: r.clone(),
                })
            })
            .collect()
    }

    /// Writes all entries as JSONL, sorted by key with per-key order preserved.
    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| LlmError::Store(e.to_string()))?;
        }
        let mut out = fs::File::create(path).map_err(|e| LlmError::Store(format!("{}: {e}", path.display())))?;
        for entry in self.entries() {
            let line = serde_json::to_string(&entry).expect("entry serializes");
            writeln!(out, "{line}").map_err(|e| LlmError::Store(e.to_string()))?;
        }
        Ok(())
    }
}
