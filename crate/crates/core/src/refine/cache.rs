//! Append-only refinement cache: one JSON object per line.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RefineError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub source: String,
    pub draft: String,
    pub refined: String,
    pub model: String,
    /// Seconds since the Unix epoch at insertion.
    pub timestamp: u64,
}

/// Hex SHA-256 of the JSON array `[kind, model, source, draft]`.
pub fn cache_key(kind: &str, model: &str, source: &str, draft: &str) -> String {
    let material = serde_json::to_string(&[kind, model, source, draft]).expect("strings serialize");
    hex::encode(Sha256::digest(material.as_bytes()))
}

/// Concurrent readers share the index; appends are serialized through the
/// writer lock.
#[derive(Debug)]
pub struct RefinementCache {
    path: PathBuf,
    entries: RwLock<HashMap<String, CacheEntry>>,
    writer: Mutex<File>,
}

impl RefinementCache {
    /// Opens or creates the cache. Unparseable lines are dropped with a
    /// warning and the file is rewritten without them.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, RefineError> {
        let path = path.as_ref().to_path_buf();
        let err = |message: String| RefineError::Cache { path: path.clone(), message };
        let mut entries = HashMap::new();
        let mut order = Vec::new();
        let mut corrupted = 0usize;
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(|e| err(e.to_string()))?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| err(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(entry) => {
                        if !entries.contains_key(&entry.key) {
                            order.push(entry.key.clone());
                        }
                        entries.insert(entry.key.clone(), entry);
                    }
                    Err(e) => {
                        log::warn!("{}: dropping corrupted cache line {}: {e}", path.display(), i + 1);
                        corrupted += 1;
                    }
                }
            }
        }
        if corrupted > 0 {
            let mut text = String::new();
            for key in &order {
                text.push_str(&serde_json::to_string(&entries[key]).expect("cache entry serializes"));
                text.push('\n');
            }
            let tmp = path.with_extension("rebuild");
            fs::write(&tmp, text).map_err(|e| err(e.to_string()))?;
            fs::rename(&tmp, &path).map_err(|e| err(e.to_string()))?;
            log::warn!("{}: rebuilt cache with {} entries", path.display(), order.len());
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| err(e.to_string()))?;
        Ok(Self { path, entries: RwLock::new(entries), writer: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    /// Appends and flushes one entry; an existing key is left untouched.
    pub fn insert(&self, entry: CacheEntry) -> Result<(), RefineError> {
        let mut file = self.writer.lock().expect("cache writer lock");
        if self.entries.read().expect("cache lock").contains_key(&entry.key) {
            return Ok(());
        }
        let line = serde_json::to_string(&entry).expect("cache entry serializes");
        writeln!(file, "{line}")
            .and_then(|_| file.flush())
            .map_err(|e| RefineError::Cache { path: self.path.clone(), message: e.to_string() })?;
        self.entries.write().expect("cache lock").insert(entry.key.clone(), entry);
        Ok(())
    }
}
