//! Keyword extraction against document embeddings and the sparse
//! document × keyword matrix built from it.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::TokenizedDocument;
use crate::embed::{cosine_similarity, embed_batch, embed_vocabulary, EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::matrix::{read_ids, read_matrix, write_ids, write_sparse, SparseMatrix};

pub const DEFAULT_N_KEYWORDS: usize = 15;

/// Up to `n` words of one document, by descending similarity to it.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordSet {
    pub doc_id: String,
    pub entries: Vec<(String, f64)>,
}

/// Orders by descending score, then ascending word.
pub(crate) fn by_score_then_word(a: &(String, f64), b: &(String, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Selects the `n` distinct tokens of `doc` most similar to `doc_vec`.
/// Non-positive similarities never qualify; equal similarities go to the
/// lexicographically smaller word.
pub fn extract_keywords(
    doc: &TokenizedDocument,
    doc_vec: &EmbeddingVector,
    word_vecs: &HashMap<String, EmbeddingVector>,
    n: usize,
) -> Result<KeywordSet> {
    if n == 0 {
        return Err(Error::invalid("number of keywords must be at least 1"));
    }
    let candidates: BTreeSet<&str> = doc.tokens.iter().map(String::as_str).collect();
    let mut scored = Vec::with_capacity(candidates.len());
    for word in candidates {
        let v = word_vecs
            .get(word)
            .ok_or_else(|| Error::MissingEmbedding(word.to_string()))?;
        let sim = cosine_similarity(doc_vec.as_slice(), v.as_slice())?;
        if sim > 0.0 {
            scored.push((word.to_string(), sim));
        }
    }
    scored.sort_by(by_score_then_word);
    scored.truncate(n);
    Ok(KeywordSet {
        doc_id: doc.doc_id.clone(),
        entries: scored,
    })
}

/// Sparse non-negative document × word matrix with named rows and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordMatrix {
    pub vocabulary: Vec<String>,
    pub doc_ids: Vec<String>,
    pub matrix: SparseMatrix,
}

impl KeywordMatrix {
    pub fn new(vocabulary: Vec<String>, doc_ids: Vec<String>, matrix: SparseMatrix) -> Result<Self> {
        if matrix.shape() != (doc_ids.len(), vocabulary.len()) {
            return Err(Error::invalid(format!(
                "matrix shape {:?} does not match {} docs x {} words",
                matrix.shape(),
                doc_ids.len(),
                vocabulary.len()
            )));
        }
        Ok(KeywordMatrix {
            vocabulary,
            doc_ids,
            matrix,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn n_words(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn select_rows(&self, rows: &[usize]) -> KeywordMatrix {
        KeywordMatrix {
            vocabulary: self.vocabulary.clone(),
            doc_ids: rows.iter().map(|&r| self.doc_ids[r].clone()).collect(),
            matrix: self.matrix.select_rows(rows),
        }
    }

    /// Re-expresses the rows over `vocabulary`, dropping words it lacks.
    /// Returns the number of this matrix's columns that survived.
    pub fn align_to(&self, vocabulary: &[String]) -> (KeywordMatrix, usize) {
        let target: HashMap<&str, usize> = vocabulary
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i))
            .collect();
        let remap: Vec<Option<usize>> = self
            .vocabulary
            .iter()
            .map(|w| target.get(w.as_str()).copied())
            .collect();
        let shared = remap.iter().filter(|c| c.is_some()).count();
        let triplets = self
            .matrix
            .triplets()
            .filter_map(|(r, c, v)| remap[c].map(|nc| (r, nc, v)))
            .collect();
        let matrix = SparseMatrix::from_triplets(self.n_docs(), vocabulary.len(), triplets)
            .expect("remapped indices in range");
        (
            KeywordMatrix {
                vocabulary: vocabulary.to_vec(),
                doc_ids: self.doc_ids.clone(),
                matrix,
            },
            shared,
        )
    }

    /// Writes `<stem>.knmf` (sparse), `<stem>.vocab.txt` and `<stem>.docs.txt`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        write_sparse(dir.join(format!("{stem}.knmf")), &self.matrix)?;
        write_ids(dir.join(format!("{stem}.vocab.txt")), &self.vocabulary)?;
        write_ids(dir.join(format!("{stem}.docs.txt")), &self.doc_ids)
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let matrix = read_matrix(dir.join(format!("{stem}.knmf")))?.into_sparse();
        let vocabulary = read_ids(dir.join(format!("{stem}.vocab.txt")))?;
        let doc_ids = read_ids(dir.join(format!("{stem}.docs.txt")))?;
        Self::new(vocabulary, doc_ids, matrix)
    }
}

/// Assembles keyword sets into a matrix. Columns are the union of keywords
/// in lexicographic order; rows follow the input order, empty sets included.
pub fn build_keyword_matrix(sets: &[KeywordSet]) -> Result<KeywordMatrix> {
    let mut seen = HashSet::new();
    for s in sets {
        if !seen.insert(s.doc_id.as_str()) {
            return Err(Error::DuplicateId(s.doc_id.clone()));
        }
    }
    let vocabulary: Vec<String> = sets
        .iter()
        .flat_map(|s| s.entries.iter().map(|(w, _)| w.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let col: HashMap<&str, usize> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i))
        .collect();
    let rows = sets
        .iter()
        .map(|s| s.entries.iter().map(|(w, v)| (col[w.as_str()], *v)).collect())
        .collect();
    let matrix = SparseMatrix::from_rows(vocabulary.len(), rows)?;
    KeywordMatrix::new(
        vocabulary,
        sets.iter().map(|s| s.doc_id.clone()).collect(),
        matrix,
    )
}

/// Raw term counts restricted to words with document frequency ≥ `min_df`.
pub fn build_bow_matrix(docs: &[TokenizedDocument], min_df: usize) -> Result<KeywordMatrix> {
    if min_df == 0 {
        return Err(Error::invalid("min_df must be at least 1"));
    }
    let counts: Vec<BTreeMap<&str, usize>> = docs
        .iter()
        .map(|d| {
            let mut c = BTreeMap::new();
            for t in &d.tokens {
                *c.entry(t.as_str()).or_default() += 1;
            }
            c
        })
        .collect();
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &counts {
        for w in c.keys() {
            *df.entry(w).or_default() += 1;
        }
    }
    let vocabulary: Vec<String> = df
        .into_iter()
        .filter(|&(_, n)| n >= min_df)
        .map(|(w, _)| w.to_string())
        .collect();
    let col: HashMap<&str, usize> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i))
        .collect();
    let rows = counts
        .iter()
        .map(|c| {
            c.iter()
                .filter_map(|(w, &n)| col.get(w).map(|&j| (j, n as f64)))
                .collect()
        })
        .collect();
    let matrix = SparseMatrix::from_rows(vocabulary.len(), rows)?;
    KeywordMatrix::new(
        vocabulary,
        docs.iter().map(|d| d.doc_id.clone()).collect(),
        matrix,
    )
}

/// Embeds every document text and every distinct token with `provider`, then
/// extracts `n` keywords per document. `texts[i]` is the raw text of `docs[i]`.
pub fn keyword_sets_for_corpus<P: EmbeddingProvider + ?Sized>(
    docs: &[TokenizedDocument],
    texts: &[&str],
    provider: &P,
    n: usize,
) -> Result<Vec<KeywordSet>> {
    if docs.len() != texts.len() {
        return Err(Error::DimensionMismatch {
            expected: docs.len(),
            got: texts.len(),
        });
    }
    if docs.is_empty() {
        return Ok(Vec::new());
    }
    let doc_vecs = embed_batch(provider, texts)?;
    let word_vecs = embed_vocabulary(provider, docs.iter().flat_map(|d| d.tokens.iter().cloned()))?;
    keyword_sets_from_vectors(docs, &doc_vecs, &word_vecs, n)
}

/// Keyword extraction over already embedded documents and words.
pub fn keyword_sets_from_vectors(
    docs: &[TokenizedDocument],
    doc_vecs: &[EmbeddingVector],
    word_vecs: &HashMap<String, EmbeddingVector>,
    n: usize,
) -> Result<Vec<KeywordSet>> {
    if docs.len() != doc_vecs.len() {
        return Err(Error::DimensionMismatch {
            expected: docs.len(),
            got: doc_vecs.len(),
        });
    }
    docs.par_iter()
        .zip(doc_vecs.par_iter())
        .map(|(d, v)| extract_keywords(d, v, word_vecs, n))
        .collect()
}
