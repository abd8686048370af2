//! Immutable content-addressed blob store standing in for IPFS.
//!
//! A [`ContentId`] is the raw Keccak-256 digest of the blob (no multihash
//! prefix). Blobs live in memory and, optionally, as one file per blob in a
//! directory, named by the hex digest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash, Digest};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContentId(pub Digest);

impl ContentId {
    pub fn digest(&self) -> &Digest {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }
}

impl fmt::Display for ContentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Debug for ContentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cid:{}", &self.0.to_hex()[..12])
    }
}

#[derive(Debug, Error)]
pub enum CasError {
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("content {0} not found")]
    NotFound(ContentId),
    #[error("stored blob for {0} does not hash to its id")]
    Corrupt(ContentId),
    #[error("store i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Default, Clone)]
pub struct ContentStore {
    blobs: BTreeMap<ContentId, Vec<u8>>,
    dir: Option<PathBuf>,
}

impl ContentStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Backs the store with `dir`, loading any blobs already there.
    pub fn persistent(dir: impl AsRef<Path>) -> Result<Self, CasError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut blobs = BTreeMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
            let Ok(digest) = Digest::from_hex(name) else { continue };
            let cid = ContentId(digest);
            let bytes = fs::read(&path)?;
            if hash(&bytes) != digest {
                return Err(CasError::Corrupt(cid));
            }
            blobs.insert(cid, bytes);
        }
        Ok(ContentStore { blobs, dir: Some(dir) })
    }

    pub fn put(&mut self, blob: &[u8]) -> Result<ContentId, CasError> {
        if blob.is_empty() {
            return Err(CasError::InvalidArgument("blob must not be empty"));
        }
        let cid = ContentId(hash(blob));
        if !self.blobs.contains_key(&cid) {
            if let Some(dir) = &self.dir {
                fs::write(dir.join(cid.to_hex()), blob)?;
            }
            self.blobs.insert(cid, blob.to_vec());
        }
        Ok(cid)
    }

    pub fn get(&self, cid: &ContentId) -> Result<&[u8], CasError> {
        self.blobs.get(cid).map(Vec::as_slice).ok_or(CasError::NotFound(*cid))
    }

    pub fn contains(&self, cid: &ContentId) -> bool {
        self.blobs.contains_key(cid)
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }
}
