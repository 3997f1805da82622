use std::collections::HashMap;
use std::path::Path;

use super::{EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::matrix::{read_ids, read_matrix};

/// Vectors looked up by exact text from a matrix file and its id file.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedStore {
    label: String,
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl PrecomputedStore {
    pub fn from_map(label: impl Into<String>, vectors: HashMap<String, Vec<f64>>) -> Result<Self> {
        let mut dim = None;
        for (k, v) in &vectors {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("non-finite embedding for `{k}`")));
            }
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: v.len(),
                    })
                }
                _ => {}
            }
        }
        let dim = dim.unwrap_or(0);
        Ok(PrecomputedStore {
            label: label.into(),
            dim,
            vectors,
        })
    }

    /// Loads `matrix` (dense or sparse) whose row `i` is the vector for line
    /// `i` of `ids`.
    pub fn load(matrix: impl AsRef<Path>, ids: impl AsRef<Path>) -> Result<Self> {
        let m = read_matrix(matrix.as_ref())?.into_dense();
        let names = read_ids(ids.as_ref())?;
        if names.len() != m.nrows() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: names.len(),
            });
        }
        let vectors = names
            .into_iter()
            .zip(m.rows())
            .map(|(n, row)| (n, row.to_vec()))
            .collect();
        Self::from_map(format!("precomputed:{}", matrix.as_ref().display()), vectors)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, text: &str) -> Option<&[f64]> {
        self.vectors.get(text).map(Vec::as_slice)
    }
}

impl EmbeddingProvider for PrecomputedStore {
    fn id(&self) -> String {
        self.label.clone()
    }

    fn dimension(&self) -> Option<usize> {
        (self.dim > 0).then_some(self.dim)
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        texts
            .iter()
            .map(|t| {
                self.vectors
                    .get(*t)
                    .ok_or_else(|| Error::MissingEmbedding(t.to_string()))
                    .and_then(|v| EmbeddingVector::new(v.clone()))
            })
            .collect()
    }
}
