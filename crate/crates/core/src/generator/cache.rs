use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GenRequest;
use crate::error::Result;

/// The request fields that identify a response, including which backend
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheKey {
    pub backend: String,
    pub prompt: String,
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
}

impl CacheKey {
    pub fn new(backend: &str, req: &GenRequest) -> Self {
        Self {
            backend: backend.to_string(),
            prompt: req.prompt.clone(),
            temperature: req.temperature,
            seed: req.seed,
            max_tokens: req.max_tokens,
        }
    }

    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("cache key serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request: CacheKey,
    pub response: String,
}

/// One `<digest>.json` file per response. Writes go to a temporary file
/// first and are renamed into place, so readers never see partial entries.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    tmp_counter: AtomicU64,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, tmp_counter: AtomicU64::new(0) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    /// Stored response for `key`, if present and the stored request matches
    /// exactly (digest collisions read as misses).
    pub fn get(&self, key: &CacheKey) -> Option<String> {
        let bytes = fs::read(self.path_for(&key.digest())).ok()?;
        let entry: CacheEntry = serde_json::from_slice(&bytes).ok()?;
        (entry.request == *key).then_some(entry.response)
    }

    pub fn put(&self, key: &CacheKey, response: &str) -> Result<()> {
        let digest = key.digest();
        let entry = CacheEntry { key: digest.clone(), request: key.clone(), response: response.to_string() };
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = self.dir.join(format!(".{digest}.{}.{n}.tmp", std::process::id()));
        fs::write(&tmp, serde_json::to_vec(&entry)?)?;
        fs::rename(&tmp, self.path_for(&digest))?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|rd| {
                rd.flatten()
                    .filter(|e| e.file_name().to_string_lossy().ends_with(".json") && !e.file_name().to_string_lossy().starts_with('.'))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
