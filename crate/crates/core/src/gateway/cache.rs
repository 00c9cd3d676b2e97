//! On-disk response cache.
//!
//! Layout: `<root>/<first two hex chars>/<hash>.json`, one file per entry,
//! holding `{prompt_hash, model_id, text, checksum, created_at}`. Entries are
//! written to a temporary file and renamed into place, so a crash never leaves
//! a half-written entry under its final name.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PromptHash;

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("cache io at {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corrupt cache entry {} ({reason}); evicted", .path.display())]
    Corrupt { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub prompt_hash: PromptHash,
    pub model_id: String,
    pub text: String,
    /// Hex SHA-256 of `text`.
    pub checksum: String,
    /// Unix seconds.
    pub created_at: i64,
}

impl CacheEntry {
    pub fn new(prompt_hash: PromptHash, model_id: &str, text: &str) -> Self {
        CacheEntry {
            prompt_hash,
            model_id: model_id.to_string(),
            text: text.to_string(),
            checksum: text_checksum(text),
            created_at: chrono::Utc::now().timestamp(),
        }
    }
}

pub fn text_checksum(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|source| CacheError::Io {
            path: root.clone(),
            source,
        })?;
        Ok(ResponseCache { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, hash: &PromptHash) -> PathBuf {
        let hex = hash.to_hex();
        self.root.join(&hex[..2]).join(format!("{hex}.json"))
    }

    /// Looks up an entry. An unreadable or inconsistent entry is deleted and
    /// reported as [`CacheError::Corrupt`]; the next lookup is a plain miss.
    pub fn get(&self, hash: &PromptHash) -> Result<Option<CacheEntry>, CacheError> {
        let path = self.entry_path(hash);
        let raw = match std::fs::read(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(CacheError::Io { path, source }),
        };
        let reason = match serde_json::from_slice::<CacheEntry>(&raw) {
            Ok(entry) if entry.prompt_hash != *hash => "hash mismatch".to_string(),
            Ok(entry) if entry.checksum != text_checksum(&entry.text) => {
                "checksum mismatch".to_string()
            }
            Ok(entry) => return Ok(Some(entry)),
            Err(e) => e.to_string(),
        };
        if let Err(source) = std::fs::remove_file(&path) {
            if source.kind() != std::io::ErrorKind::NotFound {
                return Err(CacheError::Io { path, source });
            }
        }
        Err(CacheError::Corrupt { path, reason })
    }

    pub fn put(&self, entry: &CacheEntry) -> Result<(), CacheError> {
        let path = self.entry_path(&entry.prompt_hash);
        let dir = path.parent().expect("entry paths have a parent");
        let io = |source| CacheError::Io {
            path: path.clone(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        let body = serde_json::to_vec(entry).expect("cache entries serialize");
        tmp.write_all(&body).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let hash = PromptHash::of_bytes(b"p");
        assert!(cache.get(&hash).unwrap().is_none());
        let entry = CacheEntry::new(hash, "m", "The answer is 4.");
        cache.put(&entry).unwrap();
        let hex = hash.to_hex();
        assert!(dir
            .path()
            .join(&hex[..2])
            .join(format!("{hex}.json"))
            .is_file());
        assert_eq!(cache.get(&hash).unwrap().unwrap(), entry);
    }

    #[test]
    fn truncated_entry_is_evicted() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let hash = PromptHash::of_bytes(b"q");
        cache.put(&CacheEntry::new(hash, "m", "text")).unwrap();
        let path = cache.entry_path(&hash);
        let raw = std::fs::read(&path).unwrap();
        std::fs::write(&path, &raw[..raw.len() / 2]).unwrap();
        assert!(matches!(cache.get(&hash), Err(CacheError::Corrupt { .. })));
        assert!(!path.exists());
        assert!(cache.get(&hash).unwrap().is_none());
    }

    #[test]
    fn tampered_text_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let hash = PromptHash::of_bytes(b"r");
        let mut entry = CacheEntry::new(hash, "m", "original");
        entry.text = "edited".into();
        cache.put(&entry).unwrap();
        let err = cache.get(&hash).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }
}
