use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use crate::canonical::digest_hex;
use crate::error::Result;
use crate::oracle::OracleKind;

/// Response store keyed by oracle kind and canonical argument digest.
///
/// Entries are write-once: a second `put` for an existing key keeps the
/// original bytes and logs a divergence warning when they differ.
#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<(OracleKind, String), Vec<u8>>>,
    hits: AtomicU64,
    misses: AtomicU64,
    divergences: AtomicU64,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache::default()
    }

    /// Cache persisted under `dir`, one file per entry.
    pub fn persistent(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ResponseCache { dir: Some(dir), ..ResponseCache::default() })
    }

    /// Reads `DOMAIN_BRIDGE_CACHE_DIR`; falls back to memory when unset.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os("DOMAIN_BRIDGE_CACHE_DIR") {
            Some(dir) if !dir.is_empty() => ResponseCache::persistent(PathBuf::from(dir)),
            _ => Ok(ResponseCache::in_memory()),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn entry_path(&self, kind: OracleKind, digest: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(kind.name()).join(format!("{digest}.json")))
    }

    pub fn get(&self, kind: OracleKind, key: &str) -> Option<Vec<u8>> {
        let digest = digest_hex(key.as_bytes());
        let cached = self.memory.read().expect("cache lock").get(&(kind, digest.clone())).cloned();
        let found = cached.or_else(|| {
            let bytes = fs::read(self.entry_path(kind, &digest)?).ok()?;
            self.memory.write().expect("cache lock").insert((kind, digest.clone()), bytes.clone());
            Some(bytes)
        });
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    pub fn put(&self, kind: OracleKind, key: &str, bytes: &[u8]) -> Result<()> {
        let digest = digest_hex(key.as_bytes());
        let mut memory = self.memory.write().expect("cache lock");
        if let Some(existing) = memory.get(&(kind, digest.clone())) {
            if existing != bytes {
                self.divergences.fetch_add(1, Ordering::Relaxed);
                log::warn!("{kind} oracle returned a different response for a cached request {digest}");
            }
            return Ok(());
        }
        if let Some(path) = self.entry_path(kind, &digest) {
            if !path.exists() {
                let parent = path.parent().expect("entry has a parent dir");
                fs::create_dir_all(parent)?;
                let tmp = parent.join(format!(".{digest}.{}.tmp", std::process::id()));
                let mut f = fs::File::create(&tmp)?;
                f.write_all(bytes)?;
                f.sync_all()?;
                fs::rename(&tmp, &path)?;
            }
        }
        memory.insert((kind, digest), bytes.to_vec());
        Ok(())
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn divergences(&self) -> u64 {
        self.divergences.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.memory.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_once_and_divergence_counted() {
        let c = ResponseCache::in_memory();
        assert!(c.get(OracleKind::Decode, "k").is_none());
        c.put(OracleKind::Decode, "k", b"one").unwrap();
        c.put(OracleKind::Decode, "k", b"two").unwrap();
        assert_eq!(c.get(OracleKind::Decode, "k").unwrap(), b"one");
        assert_eq!(c.divergences(), 1);
        assert!(c.get(OracleKind::Classify, "k").is_none());
    }

    #[test]
    fn persists_across_instances() {
        let dir = tempfile::tempdir().unwrap();
        {
            let c = ResponseCache::persistent(dir.path()).unwrap();
            c.put(OracleKind::Caption, "sample-1", b"\"a bird\"").unwrap();
        }
        let c = ResponseCache::persistent(dir.path()).unwrap();
        assert_eq!(c.get(OracleKind::Caption, "sample-1").unwrap(), b"\"a bird\"");
        assert_eq!(c.hits(), 1);
    }
}
