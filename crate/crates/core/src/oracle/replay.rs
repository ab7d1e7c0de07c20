use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Oracle, OracleError, OracleResponse, Result};
use crate::jsonl::{load_jsonl, parse_jsonl, JsonlError, JsonlWriter};
use crate::label::Label;
use crate::snippet::{sha256_hex, Snippet, SnippetId};

/// One line of the replay store.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub id: SnippetId,
    pub label: Label,
    pub raw_sha256: Option<String>,
}

impl From<JsonlError> for OracleError {
    fn from(e: JsonlError) -> Self {
        match e {
            JsonlError::Corrupt { .. } => OracleError::Corruption(e.to_string()),
            JsonlError::Io { source, .. } => OracleError::Io(source),
        }
    }
}

/// Builds the id → record map, rejecting conflicting duplicates.
pub(crate) fn index_records(records: Vec<ReplayRecord>) -> Result<HashMap<SnippetId, ReplayRecord>> {
    let mut map: HashMap<SnippetId, ReplayRecord> = HashMap::with_capacity(records.len());
    for rec in records {
        match map.get(&rec.id) {
            Some(prev) if prev.label != rec.label => {
                return Err(OracleError::Corruption(format!(
                    "snippet {} recorded with labels {} and {}",
                    rec.id, prev.label, rec.label
                )))
            }
            Some(_) => {}
            None => {
                map.insert(rec.id, rec);
            }
        }
    }
    Ok(map)
}

impl ReplayStore {
    /// Parses replay-store bytes without touching the filesystem.
    pub fn parse(bytes: &[u8]) -> Result<HashMap<SnippetId, ReplayRecord>> {
        index_records(parse_jsonl(bytes, "replay store")?.records)
    }
}

#[derive(Debug)]
struct Inner {
    map: HashMap<SnippetId, ReplayRecord>,
    writer: JsonlWriter,
}

/// Append-only, id-keyed label cache backed by a line-delimited JSON file.
/// Appends are serialized behind a lock.
#[derive(Debug)]
pub struct ReplayStore {
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl ReplayStore {
    pub fn open(path: &Path) -> Result<Self> {
        let read = load_jsonl::<ReplayRecord>(path)?;
        let writer = JsonlWriter::open_repaired(path, &read)?;
        let map = index_records(read.records)?;
        Ok(ReplayStore {
            path: path.to_path_buf(),
            inner: Mutex::new(Inner { map, writer }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Idempotent per id; a conflicting label is a corruption error.
    pub fn record(&self, id: SnippetId, label: Label, raw_text: Option<&str>) -> Result<()> {
        let mut inner = self.inner.lock().expect("replay store poisoned");
        if let Some(prev) = inner.map.get(&id) {
            return if prev.label == label {
                Ok(())
            } else {
                Err(OracleError::Corruption(format!(
                    "snippet {id} already recorded with label {}, refusing {label}",
                    prev.label
                )))
            };
        }
        let rec = ReplayRecord {
            id,
            label,
            raw_sha256: raw_text.map(sha256_hex),
        };
        inner.writer.append(&rec)?;
        inner.map.insert(id, rec);
        Ok(())
    }

    pub fn lookup(&self, id: SnippetId) -> Result<ReplayRecord> {
        self.inner
            .lock()
            .expect("replay store poisoned")
            .map
            .get(&id)
            .cloned()
            .ok_or(OracleError::ReplayMiss(id))
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("replay store poisoned").map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn replayed(rec: ReplayRecord) -> OracleResponse {
    OracleResponse {
        snippet_id: rec.id,
        label: rec.label,
        raw_text: None,
        latency_ms: 0,
        cost_micro_usd: 0,
    }
}

/// Answers only from the store; unseen ids are a [`OracleError::ReplayMiss`].
#[derive(Clone, Debug)]
pub struct ReplayOracle {
    store: Arc<ReplayStore>,
}

impl ReplayOracle {
    pub fn new(store: Arc<ReplayStore>) -> Self {
        ReplayOracle { store }
    }
}

impl Oracle for ReplayOracle {
    fn label(&self, snippet: &Snippet) -> Result<OracleResponse> {
        self.store.lookup(snippet.id).map(replayed)
    }
}

/// Consults the store first and records every fresh answer from `inner`,
/// so interrupted runs can resume without re-paying for labels.
#[derive(Debug)]
pub struct CachedOracle<O> {
    inner: O,
    store: Arc<ReplayStore>,
}

impl<O: Oracle> CachedOracle<O> {
    pub fn new(inner: O, store: Arc<ReplayStore>) -> Self {
        CachedOracle { inner, store }
    }
}

impl<O: Oracle> Oracle for CachedOracle<O> {
    fn label(&self, snippet: &Snippet) -> Result<OracleResponse> {
        match self.store.lookup(snippet.id) {
            Ok(rec) => Ok(replayed(rec)),
            Err(OracleError::ReplayMiss(_)) => {
                let resp = self.inner.label(snippet)?;
                self.store
                    .record(resp.snippet_id, resp.label, resp.raw_text.as_deref())?;
                Ok(resp)
            }
            Err(e) => Err(e),
        }
    }
}
