use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Field separator in digest inputs (ASCII unit separator).
const UNIT_SEPARATOR: u8 = 0x1f;

/// Requested reasoning effort. Each backend adapter decides which levels it
/// can honour and rejects the rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningLevel {
    #[default]
    Off,
    Minimal,
    Low,
    High,
    On,
}

impl ReasoningLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasoningLevel::Off => "off",
            ReasoningLevel::Minimal => "minimal",
            ReasoningLevel::Low => "low",
            ReasoningLevel::High => "high",
            ReasoningLevel::On => "on",
        }
    }
}

impl fmt::Display for ReasoningLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReasoningLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "off" => ReasoningLevel::Off,
            "minimal" => ReasoningLevel::Minimal,
            "low" => ReasoningLevel::Low,
            "high" => ReasoningLevel::High,
            "on" => ReasoningLevel::On,
            other => return Err(format!("unknown reasoning level {other:?}")),
        })
    }
}

/// Hex SHA-256 of the fields joined by the unit-separator byte.
pub fn digest_fields(fields: &[&str]) -> String {
    let mut h = Sha256::new();
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            h.update([UNIT_SEPARATOR]);
        }
        h.update(f.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Cache key and prompt hash of a request.
///
/// Temperature is rendered with Rust's shortest round-trip float formatting
/// (`0`, `0.5`, `1e-7`).
pub fn cache_key(
    model_id: &str,
    template_id: &str,
    prompt: &str,
    temperature: f64,
    reasoning_level: ReasoningLevel,
) -> String {
    digest_fields(&[
        model_id,
        template_id,
        prompt,
        &temperature.to_string(),
        reasoning_level.as_str(),
    ])
}

/// The canonical request fields a cache entry answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRequest {
    pub model_id: String,
    pub template_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub reasoning_level: ReasoningLevel,
}

impl CacheRequest {
    pub fn key(&self) -> String {
        cache_key(
            &self.model_id,
            &self.template_id,
            &self.prompt,
            self.temperature,
            self.reasoning_level,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: CacheRequest,
    pub raw_response: String,
    /// Seconds since the Unix epoch when the response was stored.
    pub timestamp: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("cache I/O at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("corrupt cache entry {path}: {source}")]
    Corrupt {
        path: String,
        source: serde_json::Error,
    },
}

/// Response store keyed by [`cache_key`]. Implementations must tolerate
/// concurrent access to distinct keys and repeated writes of one key.
pub trait ResponseCache: Send + Sync {
    fn get(&self, key: &str) -> Result<Option<CacheEntry>, CacheError>;
    fn put(&self, key: &str, entry: &CacheEntry) -> Result<(), CacheError>;
}

/// One `<digest>.json` file per entry.
#[derive(Debug)]
pub struct DirCache {
    dir: PathBuf,
    tmp_counter: AtomicU64,
}

impl DirCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|source| CacheError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Self {
            dir,
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }
}

impl ResponseCache for DirCache {
    fn get(&self, key: &str) -> Result<Option<CacheEntry>, CacheError> {
        let path = self.path(key);
        match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|source| CacheError::Corrupt {
                    path: path.display().to_string(),
                    source,
                }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(CacheError::Io {
                path: path.display().to_string(),
                source,
            }),
        }
    }

    fn put(&self, key: &str, entry: &CacheEntry) -> Result<(), CacheError> {
        let path = self.path(key);
        // Write-then-rename so readers never observe a partial file.
        let tmp = self.dir.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::Relaxed)
        ));
        let io = |source| CacheError::Io {
            path: path.display().to_string(),
            source,
        };
        let bytes = serde_json::to_vec_pretty(entry).expect("cache entry serializes");
        std::fs::write(&tmp, bytes).map_err(io)?;
        std::fs::rename(&tmp, &path).map_err(io)
    }
}

#[derive(Debug, Default)]
pub struct MemoryCache {
    entries: Mutex<HashMap<String, CacheEntry>>,
}

impl MemoryCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ResponseCache for MemoryCache {
    fn get(&self, key: &str) -> Result<Option<CacheEntry>, CacheError> {
        Ok(self.entries.lock().unwrap().get(key).cloned())
    }

    fn put(&self, key: &str, entry: &CacheEntry) -> Result<(), CacheError> {
        self.entries
            .lock()
            .unwrap()
            .insert(key.to_string(), entry.clone());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinned_vector() {
        // printf 'm\x1ft\x1fp\x1f0\x1foff' | sha256sum
        assert_eq!(
            cache_key("m", "t", "p", 0.0, ReasoningLevel::Off),
            "1e19d6571798874c0a88fda8463b8f0e8b9c80b2fc1b5f6d42e198d16710410e"
        );
    }

    #[test]
    fn deterministic_and_field_sensitive() {
        let a = cache_key("gemini", "baseline", "Name: X.", 0.0, ReasoningLevel::Minimal);
        assert_eq!(a, cache_key("gemini", "baseline", "Name: X.", 0.0, ReasoningLevel::Minimal));
        assert_ne!(a, cache_key("gpt-4o", "baseline", "Name: X.", 0.0, ReasoningLevel::Minimal));
        assert_ne!(a, cache_key("gemini", "baseline", "Name: X.", 0.0, ReasoningLevel::High));
        assert_ne!(a, cache_key("gemini", "baseline", "Name: X.", 0.5, ReasoningLevel::Minimal));
        // the separator keeps field boundaries apart
        assert_ne!(digest_fields(&["ab", "c"]), digest_fields(&["a", "bc"]));
    }

    fn entry(resp: &str) -> CacheEntry {
        CacheEntry {
            request: CacheRequest {
                model_id: "m".into(),
                template_id: "t".into(),
                prompt: "p".into(),
                temperature: 0.0,
                reasoning_level: ReasoningLevel::Off,
            },
            raw_response: resp.into(),
            timestamp: 1,
        }
    }

    #[test]
    fn dir_cache_round_trip_and_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DirCache::open(dir.path().join("c")).unwrap();
        let e = entry("Black");
        let key = e.request.key();
        assert!(cache.get(&key).unwrap().is_none());
        cache.put(&key, &e).unwrap();
        cache.put(&key, &e).unwrap();
        assert_eq!(cache.get(&key).unwrap(), Some(e));
        assert!(dir.path().join("c").join(format!("{key}.json")).exists());
        let files = std::fs::read_dir(dir.path().join("c")).unwrap().count();
        assert_eq!(files, 1);
    }

    #[test]
    fn dir_cache_concurrent_writers() {
        let dir = tempfile::tempdir().unwrap();
        let cache = std::sync::Arc::new(DirCache::open(dir.path()).unwrap());
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let cache = cache.clone();
                std::thread::spawn(move || {
                    for j in 0..20 {
                        let e = entry(&format!("r{}", j % 4));
                        let key = format!("k{}", (i + j) % 5);
                        cache.put(&key, &e).unwrap();
                        cache.get(&key).unwrap().unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 5);
    }
}
