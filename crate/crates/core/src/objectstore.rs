//! Content-addressed, immutable blob storage.
//!
//! Blobs are named by the SHA-256 of their bytes and live under
//! `objects/<first2>/<rest62>` (git-style fanout). Writes go through a temp
//! file plus atomic rename, so concurrent identical puts are benign and
//! readers never observe a partial blob.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("blob not found: {0}")]
    NotFound(BlobId),
    #[error("corrupt blob {id}: stored bytes hash to {actual}")]
    CorruptBlob { id: BlobId, actual: BlobId },
    #[error("invalid blob id {0:?}: expected 64 lowercase hex chars")]
    InvalidId(String),
    #[error("object store i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// SHA-256 digest of a blob's bytes, as 64 lowercase hex chars.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlobId(String);

impl Default for BlobId {
    /// The digest of empty input; a placeholder for ids assigned after
    /// deserialization.
    fn default() -> BlobId {
        BlobId::of(b"")
    }
}

impl BlobId {
    /// Digest of the given bytes.
    pub fn of(bytes: &[u8]) -> BlobId {
        let digest = Sha256::digest(bytes);
        let mut s = String::with_capacity(64);
        for b in digest {
            s.push_str(&format!("{b:02x}"));
        }
        BlobId(s)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for BlobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for BlobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlobId({})", self.0)
    }
}

impl FromStr for BlobId {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, StoreError> {
        if s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
            Ok(BlobId(s.to_string()))
        } else {
            Err(StoreError::InvalidId(s.to_string()))
        }
    }
}

/// Content-addressed blob store rooted at a directory.
#[derive(Debug, Clone)]
pub struct ObjectStore {
    root: PathBuf,
}

impl ObjectStore {
    /// Open (and create, if missing) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<ObjectStore, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("tmp"))?;
        Ok(ObjectStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn blob_path(&self, id: &BlobId) -> PathBuf {
        let hex = id.as_str();
        self.root.join(&hex[..2]).join(&hex[2..])
    }

    /// Store bytes, returning their content id. Idempotent: putting the same
    /// bytes twice yields the same id and leaves the first copy untouched.
    pub fn put(&self, bytes: &[u8]) -> Result<BlobId, StoreError> {
        let id = BlobId::of(bytes);
        let path = self.blob_path(&id);
        if path.exists() {
            return Ok(id);
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut tmp = tempfile::NamedTempFile::new_in(self.root.join("tmp"))?;
        tmp.write_all(bytes)?;
        tmp.flush()?;
        // Rename is atomic within one filesystem; a concurrent identical put
        // overwrites with identical content.
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(id)
    }

    /// Retrieve the exact bytes stored under `id`, verifying the digest.
    pub fn get(&self, id: &BlobId) -> Result<Vec<u8>, StoreError> {
        let path = self.blob_path(id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(id.clone()))
            }
            Err(e) => return Err(e.into()),
        };
        let actual = BlobId::of(&bytes);
        if &actual != id {
            return Err(StoreError::CorruptBlob {
                id: id.clone(),
                actual,
            });
        }
        Ok(bytes)
    }

    pub fn contains(&self, id: &BlobId) -> bool {
        self.blob_path(id).exists()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> (tempfile::TempDir, ObjectStore) {
        let dir = tempfile::tempdir().unwrap();
        let store = ObjectStore::open(dir.path().join("objects")).unwrap();
        (dir, store)
    }

    #[test]
    fn empty_blob_has_well_known_digest() {
        let (_d, s) = store();
        let id = s.put(b"").unwrap();
        assert_eq!(
            id.as_str(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn put_is_idempotent() {
        let (_d, s) = store();
        let a = s.put(b"hello").unwrap();
        let b = s.put(b"hello").unwrap();
        assert_eq!(a, b);
        assert_eq!(s.get(&a).unwrap(), b"hello");
    }

    #[test]
    fn get_unknown_id_is_not_found() {
        let (_d, s) = store();
        let id = BlobId::of(b"never stored");
        match s.get(&id) {
            Err(StoreError::NotFound(missing)) => assert_eq!(missing, id),
            other => panic!("expected NotFound, got {other:?}"),
        }
    }

    #[test]
    fn tampered_blob_is_reported_corrupt() {
        let (_d, s) = store();
        let id = s.put(b"original bytes").unwrap();
        let path = s.blob_path(&id);
        fs::write(&path, b"tampered bytes").unwrap();
        match s.get(&id) {
            Err(StoreError::CorruptBlob { id: bad, .. }) => assert_eq!(bad, id),
            other => panic!("expected CorruptBlob, got {other:?}"),
        }
    }

    #[test]
    fn blob_id_parses_only_valid_hex() {
        assert!(BlobId::from_str(&"a".repeat(64)).is_ok());
        assert!(BlobId::from_str(&"A".repeat(64)).is_err());
        assert!(BlobId::from_str("abc").is_err());
    }
}
