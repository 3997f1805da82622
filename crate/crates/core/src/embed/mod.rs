//! Embedding providers and cosine similarity.
//!
//! Documents and words are embedded through the same [`EmbeddingProvider`].
//! Three backends exist: a precomputed store read from matrix files, an HTTP
//! client for an out-of-process encoder, and a seeded hash embedder for tests.

mod cache;
mod hashed;
mod http;
mod store;

use std::collections::HashMap;
use std::sync::Arc;

pub use cache::CachedProvider;
pub use hashed::HashEmbedder;
pub use http::{HttpConfig, HttpEmbedder};
pub use store::PrecomputedStore;

use crate::error::{Error, Result};

/// Finite, fixed-dimension embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: 0, col: i });
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Source of text embeddings. Implementations must return one vector per
/// input text, in input order, all of the same dimension.
pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier used to key caches.
    fn id(&self) -> String;

    /// Output dimension, when known ahead of the first request.
    fn dimension(&self) -> Option<usize>;

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Arc<P> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn dimension(&self) -> Option<usize> {
        (**self).dimension()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed(texts)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn dimension(&self) -> Option<usize> {
        (**self).dimension()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed(texts)
    }
}

/// Embeds `texts`, checking the one-vector-per-text and common-dimension
/// contract of the provider.
pub fn embed_batch<P, S>(provider: &P, texts: &[S]) -> Result<Vec<EmbeddingVector>>
where
    P: EmbeddingProvider + ?Sized,
    S: AsRef<str>,
{
    if texts.is_empty() {
        return Err(Error::invalid("embed_batch called with no texts"));
    }
    let refs: Vec<&str> = texts.iter().map(AsRef::as_ref).collect();
    if refs.iter().any(|t| t.is_empty()) {
        return Err(Error::invalid("cannot embed an empty text"));
    }
    let out = provider.embed(&refs)?;
    if out.len() != refs.len() {
        return Err(Error::DimensionMismatch {
            expected: refs.len(),
            got: out.len(),
        });
    }
    let expected = provider.dimension().unwrap_or(out[0].dim());
    if let Some(bad) = out.iter().find(|v| v.dim() != expected || v.dim() == 0) {
        return Err(Error::DimensionMismatch {
            expected,
            got: bad.dim(),
        });
    }
    Ok(out)
}

/// Embeds each distinct string once and returns a lookup table.
pub fn embed_vocabulary<P, I, S>(provider: &P, words: I) -> Result<HashMap<String, EmbeddingVector>>
where
    P: EmbeddingProvider + ?Sized,
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let mut uniq: Vec<String> = words.into_iter().map(Into::into).collect();
    uniq.sort();
    uniq.dedup();
    if uniq.is_empty() {
        return Ok(HashMap::new());
    }
    let vecs = embed_batch(provider, &uniq)?;
    Ok(uniq.into_iter().zip(vecs).collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `dot(a, b) / (|a| |b|)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    // the product of norms is symmetric in (a, b), keeping the result symmetric
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}
