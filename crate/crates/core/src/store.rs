//! Content-addressed artifact store: JSON payloads under their cache key,
//! each file carrying its own digest line so corruption is detected on
//! read instead of silently propagating.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::model::sha256_hex;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("artifact store {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("artifact {key}: {source}")]
    Serialize {
        key: String,
        source: serde_json::Error,
    },

    #[error("artifact {key} is corrupted: {reason}")]
    Corrupted { key: String, reason: String },
}

/// Directory-backed store. Keys are hex digests from `cache_key`; values
/// are stored as `<sha256 of payload>\n<payload JSON>` under
/// `root/<key prefix>/<key>.json`.
pub struct ArtifactStore {
    root: PathBuf,
}

impl ArtifactStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|source| StoreError::Io {
            path: root.clone(),
            source,
        })?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, key: &str) -> PathBuf {
        let prefix = if key.len() >= 2 { &key[..2] } else { "xx" };
        self.root.join(prefix).join(format!("{key}.json"))
    }

    /// Writes the value under the key. Writes go through a temp file plus
    /// rename so concurrent readers never observe a partial record.
    pub fn store<T: Serialize>(&self, key: &str, value: &T) -> Result<(), StoreError> {
        let payload = serde_json::to_string(value).map_err(|source| StoreError::Serialize {
            key: key.to_string(),
            source,
        })?;
        let digest = sha256_hex(payload.as_bytes());
        let path = self.path_for(key);
        let dir = path.parent().expect("store paths have a parent");
        fs::create_dir_all(dir).map_err(|source| StoreError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
        let io_err = |source| StoreError::Io {
            path: tmp.clone(),
            source,
        };
        let mut file = fs::File::create(&tmp).map_err(io_err)?;
        file.write_all(digest.as_bytes()).map_err(io_err)?;
        file.write_all(b"\n").map_err(io_err)?;
        file.write_all(payload.as_bytes()).map_err(io_err)?;
        file.sync_all().map_err(io_err)?;
        drop(file);
        fs::rename(&tmp, &path).map_err(|source| StoreError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(())
    }

    /// Loads the value under the key. An absent key is a miss (`Ok(None)`);
    /// a present-but-damaged record is an error.
    pub fn load<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, StoreError> {
        let path = self.path_for(key);
        let raw = match fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(StoreError::Io { path, source }),
        };
        let (digest, payload) = raw.split_once('\n').ok_or_else(|| StoreError::Corrupted {
            key: key.to_string(),
            reason: "missing digest line".to_string(),
        })?;
        if sha256_hex(payload.as_bytes()) != digest {
            return Err(StoreError::Corrupted {
                key: key.to_string(),
                reason: "payload digest mismatch".to_string(),
            });
        }
        let value = serde_json::from_str(payload).map_err(|e| StoreError::Corrupted {
            key: key.to_string(),
            reason: format!("payload is not valid JSON for the requested type: {e}"),
        })?;
        Ok(Some(value))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.path_for(key).is_file()
    }

    /// Number of stored records.
    pub fn len(&self) -> Result<usize, StoreError> {
        let mut count = 0;
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
            Err(source) => {
                return Err(StoreError::Io {
                    path: self.root.clone(),
                    source,
                })
            }
        };
        for entry in entries.flatten() {
            let sub = entry.path();
            if !sub.is_dir() {
                continue;
            }
            count += fs::read_dir(&sub)
                .map_err(|source| StoreError::Io {
                    path: sub.clone(),
                    source,
                })?
                .flatten()
                .filter(|f| f.path().extension().is_some_and(|e| e == "json"))
                .count();
        }
        Ok(count)
    }

    pub fn is_empty(&self) -> Result<bool, StoreError> {
        Ok(self.len()? == 0)
    }

    /// Removes every stored artifact. Returns the number of records
    /// deleted.
    pub fn clear(&self) -> Result<usize, StoreError> {
        let mut removed = 0;
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
            Err(source) => {
                return Err(StoreError::Io {
                    path: self.root.clone(),
                    source,
                })
            }
        };
        for entry in entries.flatten() {
            let sub = entry.path();
            if !sub.is_dir() {
                continue;
            }
            for file in fs::read_dir(&sub)
                .map_err(|source| StoreError::Io {
                    path: sub.clone(),
                    source,
                })?
                .flatten()
            {
                let p = file.path();
                if p.extension().is_some_and(|e| e == "json") {
                    fs::remove_file(&p).map_err(|source| StoreError::Io { path: p, source })?;
                    removed += 1;
                }
            }
        }
        Ok(removed)
    }
}
