use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};

/// Content-addressed on-disk cache in front of another provider. Entries are
/// keyed by `sha256(provider id, text)` and hold raw little-endian `f64`s.
/// Deleting the directory is always safe.
#[derive(Debug)]
pub struct CachedProvider<P> {
    inner: P,
    dir: PathBuf,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub const ENV_VAR: &'static str = "KEYNMF_CACHE_DIR";

    pub fn new(inner: P, dir: impl Into<PathBuf>) -> Self {
        CachedProvider {
            inner,
            dir: dir.into(),
        }
    }

    /// `$KEYNMF_CACHE_DIR`, else `$XDG_CACHE_HOME/keynmf`, else `~/.cache/keynmf`.
    pub fn default_dir() -> PathBuf {
        if let Some(d) = std::env::var_os(Self::ENV_VAR) {
            return PathBuf::from(d);
        }
        if let Some(d) = std::env::var_os("XDG_CACHE_HOME") {
            return PathBuf::from(d).join("keynmf");
        }
        std::env::var_os("HOME")
            .map(|h| PathBuf::from(h).join(".cache").join("keynmf"))
            .unwrap_or_else(|| PathBuf::from(".keynmf-cache"))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, text: &str) -> PathBuf {
        let mut h = Sha256::new();
        h.update(self.inner.id().as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        let key = hex::encode(h.finalize());
        self.dir.join(&key[..2]).join(&key[2..])
    }

    fn read_entry(path: &Path) -> Option<Vec<f64>> {
        let bytes = std::fs::read(path).ok()?;
        if bytes.is_empty() || bytes.len() % 8 != 0 {
            return None;
        }
        Some(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    }

    fn write_entry(path: &Path, v: &[f64]) -> Result<()> {
        let parent = path.parent().expect("entry has a parent");
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn dimension(&self) -> Option<usize> {
        self.inner.dimension()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let mut out: Vec<Option<EmbeddingVector>> = Vec::with_capacity(texts.len());
        let mut missing = Vec::new();
        for (i, t) in texts.iter().enumerate() {
            let hit = Self::read_entry(&self.entry_path(t))
                .filter(|v| self.inner.dimension().is_none_or(|d| d == v.len()))
                .and_then(|v| EmbeddingVector::new(v).ok());
            if hit.is_none() {
                missing.push(i);
            }
            out.push(hit);
        }
        if !missing.is_empty() {
            let batch: Vec<&str> = missing.iter().map(|&i| texts[i]).collect();
            let fresh = self.inner.embed(&batch)?;
            for (&i, v) in missing.iter().zip(fresh) {
                Self::write_entry(&self.entry_path(texts[i]), v.as_slice())?;
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }
}
