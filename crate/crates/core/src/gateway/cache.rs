//! Content-addressed on-disk cache of model responses.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use super::GenerationRecord;

/// Deterministic key over every input that can change a model response.
pub fn cache_key(adapter_id: &str, llm_id: &str, temperature: f64, prompt_text: &str) -> String {
    let mut h = Sha256::new();
    for part in [adapter_id.as_bytes(), llm_id.as_bytes(), &temperature.to_bits().to_be_bytes(), prompt_text.as_bytes()] {
        h.update((part.len() as u64).to_be_bytes());
        h.update(part);
    }
    format!("{:x}", h.finalize())
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

static TMP: AtomicU64 = AtomicU64::new(0);

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ResponseCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<GenerationRecord> {
        let text = std::fs::read_to_string(self.path(key)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Atomic insert: concurrent writers of one key leave one complete file.
    pub fn put(&self, key: &str, rec: &GenerationRecord) -> std::io::Result<()> {
        let path = self.path(key);
        std::fs::create_dir_all(path.parent().expect("cache path has a parent"))?;
        let tmp = path.with_extension(format!(
            "tmp.{}.{}",
            std::process::id(),
            TMP.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::write(&tmp, serde_json::to_vec(rec).expect("record serializes"))?;
        std::fs::rename(&tmp, &path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_sensitivity() {
        let k = cache_key("m", "gpt", 0.0, "prompt");
        assert_eq!(k, cache_key("m", "gpt", 0.0, "prompt"));
        assert_ne!(k, cache_key("m", "gpt", 0.7, "prompt"));
        assert_ne!(k, cache_key("m", "gpt", 0.0, "prompT"));
        assert_ne!(k, cache_key("m2", "gpt", 0.0, "prompt"));
        assert_ne!(k, cache_key("m", "gpt2", 0.0, "prompt"));
        assert_ne!(cache_key("ab", "c", 0.0, ""), cache_key("a", "bc", 0.0, ""));
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = ResponseCache::new(dir.path());
        let mut r = GenerationRecord::new("dp", "m", 1);
        r.sql_text = "SELECT 1".into();
        let k = cache_key("m", "x", 0.0, "p");
        assert!(c.get(&k).is_none());
        c.put(&k, &r).unwrap();
        assert_eq!(c.get(&k).unwrap(), r);
    }
}
