//! On-disk cache of constructed channels and codes, keyed by content hash.

use std::fs;
use std::path::{Path, PathBuf};

use polar_fading::{DiscreteBmsc, Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Environment variable naming the cache directory.
pub const CACHE_ENV: &str = "POLAR_FADING_CACHE";

#[derive(Debug, Clone, Default)]
pub struct Cache {
    dir: Option<PathBuf>,
}

/// `sha256(kind, library version, JSON of the inputs)`.
pub fn cache_key(kind: &str, inputs: &impl Serialize) -> String {
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    h.update([0]);
    h.update(polar_fading::VERSION.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(inputs).expect("inputs serialize"));
    hex::encode(h.finalize())
}

impl Cache {
    /// No directory disables caching.
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self { dir }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path(&self, kind: &str, key: &str, ext: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{kind}-{key}.{ext}")))
    }

    fn store(path: &Path, text: &str) -> Result<()> {
        let io = |e: std::io::Error| Error::Artifact(format!("cache write {}: {e}", path.display()));
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io)?;
        }
        // write-then-rename so a killed run never leaves a torn entry
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, text).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    /// Returns the cached value or computes and stores it. Unreadable
    /// entries are recomputed.
    pub fn json<T, I, F>(&self, kind: &str, inputs: &I, compute: F) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        I: Serialize,
        F: FnOnce() -> Result<T>,
    {
        let Some(path) = self.path(kind, &cache_key(kind, inputs), "json") else {
            return compute();
        };
        if let Ok(text) = fs::read_to_string(&path) {
            if let Ok(v) = serde_json::from_str(&text) {
                return Ok(v);
            }
        }
        let v = compute()?;
        let text = serde_json::to_string(&v).map_err(|e| Error::Artifact(e.to_string()))?;
        Self::store(&path, &text)?;
        Ok(v)
    }

    /// As [`Cache::json`] for quantized channels, stored as channel CSV.
    pub fn channel<I, F>(&self, kind: &str, inputs: &I, compute: F) -> Result<DiscreteBmsc>
    where
        I: Serialize,
        F: FnOnce() -> Result<DiscreteBmsc>,
    {
        let Some(path) = self.path(kind, &cache_key(kind, inputs), "csv") else {
            return compute();
        };
        if let Ok(text) = fs::read_to_string(&path) {
            if let Ok(w) = DiscreteBmsc::from_csv(&text) {
                return Ok(w);
            }
        }
        let w = compute()?;
        Self::store(&path, &w.to_csv())?;
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn computes_once() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(Some(dir.path().to_path_buf()));
        let calls = Cell::new(0);
        let f = || {
            calls.set(calls.get() + 1);
            Ok(vec![0.1f64, 1.0 / 3.0])
        };
        let a: Vec<f64> = cache.json("z", &(1, "x"), f).unwrap();
        let b: Vec<f64> = cache.json("z", &(1, "x"), f).unwrap();
        assert_eq!(a, b);
        assert_eq!(calls.get(), 1);
        let _: Vec<f64> = cache.json("z", &(2, "x"), f).unwrap();
        assert_eq!(calls.get(), 2);
    }

    #[test]
    fn channel_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(Some(dir.path().to_path_buf()));
        let w = DiscreteBmsc::bsc(0.11).unwrap();
        let a = cache.channel("q", &1, || Ok(w.clone())).unwrap();
        let b = cache.channel("q", &1, || panic!("should hit the cache")).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn corrupt_entry_recomputed() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(Some(dir.path().to_path_buf()));
        let key = cache_key("z", &0);
        fs::write(dir.path().join(format!("z-{key}.json")), "not json").unwrap();
        let v: u32 = cache.json("z", &0, || Ok(7)).unwrap();
        assert_eq!(v, 7);
    }

    #[test]
    fn disabled_cache_always_computes() {
        let cache = Cache::new(None);
        let v: u32 = cache.json("z", &0, || Ok(3)).unwrap();
        assert_eq!(v, 3);
        assert!(cache.dir().is_none());
    }
}
