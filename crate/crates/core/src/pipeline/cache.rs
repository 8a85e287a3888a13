use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::geometry::InstanceMask;

/// Everything a cached provider result depends on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheFingerprint<'a> {
    pub image_sha256: &'a str,
    pub prompt: &'a str,
    pub box_threshold: f64,
    pub text_threshold: f64,
    pub confidence_floor: f64,
    pub model_version: &'a str,
}

impl CacheFingerprint<'_> {
    pub fn key(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("fingerprint serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub model_version: String,
    pub detections: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<Vec<InstanceMask>>,
}

/// One JSON file per key. Writes go through a temp file and an atomic
/// rename, so concurrent readers never see a partial entry.
#[derive(Debug, Clone)]
pub struct ResultCache {
    dir: PathBuf,
}

impl ResultCache {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    pub fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// A missing, unreadable or corrupt entry is a miss.
    pub fn lookup(&self, key: &str) -> Option<CacheEntry> {
        let path = self.entry_path(key);
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) if entry.key == key => Some(entry),
            Ok(_) => {
                warn!(
                    "cache entry {} holds a different key; ignoring",
                    path.display()
                );
                None
            }
            Err(e) => {
                warn!("corrupt cache entry {}: {e}; ignoring", path.display());
                None
            }
        }
    }

    pub fn store(&self, entry: &CacheEntry) -> Result<()> {
        let path = self.entry_path(&entry.key);
        let mut tmp =
            tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let bytes = serde_json::to_vec(entry).expect("cache entry serializes");
        tmp.write_all(&bytes)
            .map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;

    fn fp<'a>(prompt: &'a str) -> CacheFingerprint<'a> {
        CacheFingerprint {
            image_sha256: "abc",
            prompt,
            box_threshold: 0.3,
            text_threshold: 0.25,
            confidence_floor: 0.0,
            model_version: "m",
        }
    }

    #[test]
    fn keys_depend_on_every_field() {
        assert_eq!(fp("a").key(), fp("a").key());
        assert_ne!(fp("a").key(), fp("b").key());
        let mut f = fp("a");
        f.confidence_floor = 0.5;
        assert_ne!(f.key(), fp("a").key());
    }

    #[test]
    fn store_lookup_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResultCache::open(dir.path()).unwrap();
        let key = fp("a").key();
        assert!(cache.lookup(&key).is_none());
        let entry = CacheEntry {
            key: key.clone(),
            model_version: "m".into(),
            detections: vec![
                Detection::new(BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), 0.5).unwrap(),
            ],
            masks: None,
        };
        cache.store(&entry).unwrap();
        assert_eq!(cache.lookup(&key), Some(entry.clone()));
        fs::write(cache.entry_path(&key), b"{not json").unwrap();
        assert!(cache.lookup(&key).is_none());
        cache.store(&entry).unwrap();
        assert_eq!(cache.lookup(&key), Some(entry));
    }
}
