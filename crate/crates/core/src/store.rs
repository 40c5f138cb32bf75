//! On-disk artifacts: checkpoint blob/manifest pairs and a content-addressed
//! cache keyed by the SHA-256 of each job's inputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_blob_with_manifest<M: Serialize>(dir: &Path, stem: &str, blob: &[u8], manifest: &M) -> Result<()> {
    write_atomic(&dir.join(format!("{stem}.bin")), blob)?;
    write_atomic(&dir.join(format!("{stem}.json")), &serde_json::to_vec_pretty(manifest)?)
}

pub fn read_blob_with_manifest<M: DeserializeOwned>(dir: &Path, stem: &str) -> Result<(Vec<u8>, M)> {
    let bin = dir.join(format!("{stem}.bin"));
    let json = dir.join(format!("{stem}.json"));
    if !bin.exists() || !json.exists() {
        return Err(Error::MissingCheckpoint(format!("{}/{stem}.{{bin,json}}", dir.display())));
    }
    let blob = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let text = fs::read(&json).map_err(|e| Error::io(&json, e))?;
    Ok((blob, serde_json::from_slice(&text)?))
}

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn content_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serialisable key");
    hex(&Sha256::digest(&bytes))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Cache of JSON artifacts under `root/<kind>/<hash>.json`.
#[derive(Debug, Clone)]
pub struct ArtifactStore {
    root: PathBuf,
}

impl ArtifactStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, kind: &str, key: &str) -> PathBuf {
        self.root.join(kind).join(format!("{key}.json"))
    }

    pub fn contains(&self, kind: &str, key: &str) -> bool {
        self.path(kind, key).exists()
    }

    pub fn get<T: DeserializeOwned>(&self, kind: &str, key: &str) -> Result<Option<T>> {
        let p = self.path(kind, key);
        match fs::read(&p) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| Error::Store(format!("{}: {e}", p.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(p, e)),
        }
    }

    pub fn put<T: Serialize>(&self, kind: &str, key: &str, value: &T) -> Result<()> {
        write_atomic(&self.path(kind, key), &serde_json::to_vec(value)?)
    }

    /// Returns the cached artifact or computes and stores it.
    pub fn get_or_compute<T, F>(&self, kind: &str, key: &str, compute: F) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T>,
    {
        if let Some(v) = self.get(kind, key)? {
            return Ok(v);
        }
        let v = compute()?;
        self.put(kind, key, &v)?;
        Ok(v)
    }
}
