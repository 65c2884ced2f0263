//! Content-addressed response cache.
//!
//! Each entry lives in its own file `<root>/<sha256-hex>`. The first line is
//! the JSON-encoded key tuple, everything after the first newline is the
//! response text verbatim. Writes go to a temporary file in the same
//! directory and are renamed into place.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Identity of one oracle query.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub oracle_id: String,
    pub image_sha256: String,
    pub question: String,
    /// Temperature in thousandths, so float formatting never changes the key.
    pub temperature_milli: i64,
    pub repeat_index: u32,
}

impl CacheKey {
    pub fn new(oracle_id: &str, image_sha256: &str, question: &str, temperature: f64, repeat_index: u32) -> Self {
        CacheKey {
            oracle_id: oracle_id.to_string(),
            image_sha256: image_sha256.to_ascii_lowercase(),
            question: question.to_string(),
            temperature_milli: (temperature * 1000.0).round() as i64,
            repeat_index,
        }
    }

    /// The key tuple as a single JSON line.
    pub fn header(&self) -> String {
        serde_json::to_string(&(
            &self.oracle_id,
            &self.image_sha256,
            &self.question,
            self.temperature_milli,
            self.repeat_index,
        ))
        .expect("key tuple serializes")
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.header().as_bytes()).into()
    }

    pub fn hex(&self) -> String {
        hex::encode(self.digest())
    }

    /// First eight digest bytes, used to seed deterministic backends.
    pub fn seed(&self) -> u64 {
        let d = self.digest();
        u64::from_le_bytes(d[..8].try_into().expect("eight bytes"))
    }
}

/// On-disk store, one file per key.
#[derive(Clone, Debug)]
pub struct FileStore {
    root: PathBuf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StoreStats {
    pub entries: u64,
    pub bytes: u64,
}

fn is_entry_name(name: &str) -> bool {
    name.len() == 64 && name.bytes().all(|b| b.is_ascii_hexdigit())
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(FileStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.root.join(key.hex())
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<String>> {
        let path = self.path_for(key);
        let raw = match fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let (header, text) = raw.split_once('\n').ok_or_else(|| Error::Parse {
            path: path.clone(),
            line: 1,
            message: "cache entry lacks a key header".into(),
        })?;
        if header != key.header() {
            return Err(Error::Invariant(format!(
                "cache entry {} holds key {header}, expected {}",
                path.display(),
                key.header()
            )));
        }
        Ok(Some(text.to_string()))
    }

    pub fn put(&self, key: &CacheKey, text: &str) -> Result<()> {
        let path = self.path_for(key);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(|e| Error::io(&self.root, e))?;
        tmp.write_all(key.header().as_bytes())
            .and_then(|_| tmp.write_all(b"\n"))
            .and_then(|_| tmp.write_all(text.as_bytes()))
            .and_then(|_| tmp.as_file().sync_all())
            .map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }

    pub fn stats(&self) -> Result<StoreStats> {
        let mut stats = StoreStats::default();
        for entry in fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))? {
            let entry = entry.map_err(|e| Error::io(&self.root, e))?;
            if entry.file_name().to_str().is_some_and(is_entry_name) {
                stats.entries += 1;
                stats.bytes += entry.metadata().map_err(|e| Error::io(entry.path(), e))?.len();
            }
        }
        Ok(stats)
    }

    /// Removes every cache entry; other files in the directory are left alone.
    pub fn purge(&self) -> Result<u64> {
        let mut removed = 0;
        for entry in fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))? {
            let entry = entry.map_err(|e| Error::io(&self.root, e))?;
            if entry.file_name().to_str().is_some_and(is_entry_name) {
                fs::remove_file(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
                removed += 1;
            }
        }
        Ok(removed)
    }
}

type Slot = Arc<Mutex<Option<String>>>;

/// In-memory layer over an optional [`FileStore`].
///
/// Each key has its own slot lock, so concurrent queries for the same key
/// dispatch to the backend at most once.
#[derive(Debug, Default)]
pub struct ResponseCache {
    slots: Mutex<HashMap<CacheKey, Slot>>,
    store: Option<FileStore>,
}

/// Whether a lookup was served from cache.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lookup {
    Hit,
    Miss,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache::default()
    }

    pub fn persistent(store: FileStore) -> Self {
        ResponseCache {
            slots: Mutex::new(HashMap::new()),
            store: Some(store),
        }
    }

    pub fn store(&self) -> Option<&FileStore> {
        self.store.as_ref()
    }

    pub fn len(&self) -> usize {
        let slots = self.slots.lock().expect("cache lock poisoned");
        slots
            .values()
            .filter(|s| s.lock().expect("slot lock poisoned").is_some())
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the cached text for `key`, or computes, persists and returns it.
    pub fn get_or_insert_with<F>(&self, key: &CacheKey, compute: F) -> Result<(String, Lookup)>
    where
        F: FnOnce() -> Result<String>,
    {
        let slot = {
            let mut slots = self.slots.lock().expect("cache lock poisoned");
            Arc::clone(slots.entry(key.clone()).or_default())
        };
        let mut guard = slot.lock().expect("slot lock poisoned");
        if let Some(text) = guard.as_ref() {
            return Ok((text.clone(), Lookup::Hit));
        }
        if let Some(store) = &self.store {
            if let Some(text) = store.get(key)? {
                *guard = Some(text.clone());
                return Ok((text, Lookup::Hit));
            }
        }
        let text = compute()?;
        if let Some(store) = &self.store {
            store.put(key, &text)?;
        }
        *guard = Some(text.clone());
        Ok((text, Lookup::Miss))
    }
}
