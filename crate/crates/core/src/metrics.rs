//! Topic-description quality: diversity, word-embedding coherence and NPMI
//! coherence.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::corpus::TokenizedDocument;
use crate::embed::{cosine_similarity, embed_vocabulary, EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::linalg::truncated_svd;
use crate::matrix::SparseMatrix;

pub const DEFAULT_TOP_WORDS: usize = 10;
pub const DEFAULT_NPMI_WINDOW: usize = 10;
pub const DEFAULT_PPMI_WINDOW: usize = 10;
pub const DEFAULT_INTERNAL_DIM: usize = 100;

const NPMI_EPS: f64 = 1e-12;

/// Ordered top-word lists, one per topic.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicDescriptions {
    topics: Vec<Vec<String>>,
}

impl TopicDescriptions {
    pub fn new(topics: Vec<Vec<String>>) -> Result<Self> {
        if topics.is_empty() {
            return Err(Error::invalid("at least one topic is required"));
        }
        for (i, t) in topics.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::invalid(format!("topic {i} has no words")));
            }
            let uniq: HashSet<&String> = t.iter().collect();
            if uniq.len() != t.len() {
                return Err(Error::invalid(format!("topic {i} repeats a word")));
            }
        }
        Ok(TopicDescriptions { topics })
    }

    pub fn topics(&self) -> &[Vec<String>] {
        &self.topics
    }

    fn words(&self) -> BTreeSet<&str> {
        self.topics.iter().flatten().map(String::as_str).collect()
    }
}

/// Unique words over total word slots.
pub fn diversity(desc: &TopicDescriptions) -> f64 {
    let slots: usize = desc.topics.iter().map(Vec::len).sum();
    desc.words().len() as f64 / slots as f64
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn pair_mean<F>(words: &[String], mut score: F) -> Result<Option<f64>>
where
    F: FnMut(&str, &str) -> Result<f64>,
{
    let mut vals = Vec::new();
    for i in 0..words.len() {
        for j in i + 1..words.len() {
            vals.push(score(&words[i], &words[j])?);
        }
    }
    Ok(mean(vals))
}

fn overall(per_topic: &[Option<f64>]) -> Result<f64> {
    mean(per_topic.iter().flatten().copied())
        .ok_or_else(|| Error::invalid("coherence needs a topic with at least two words"))
}

/// Mean pairwise cosine similarity of each topic's words; `None` for topics
/// with a single word.
pub fn embedding_coherence_per_topic<P: EmbeddingProvider + ?Sized>(
    desc: &TopicDescriptions,
    provider: &P,
) -> Result<Vec<Option<f64>>> {
    let vecs = embed_vocabulary(provider, desc.words())?;
    desc.topics
        .iter()
        .map(|t| {
            pair_mean(t, |a, b| {
                cosine_similarity(vecs[a].as_slice(), vecs[b].as_slice())
            })
        })
        .collect()
}

/// Mean over topics of the mean pairwise cosine similarity of topic words.
pub fn embedding_coherence<P: EmbeddingProvider + ?Sized>(desc: &TopicDescriptions, provider: &P) -> Result<f64> {
    overall(&embedding_coherence_per_topic(desc, provider)?)
}

/// Word vectors from the positive PMI of symmetric-window co-occurrence
/// counts, factorized by truncated SVD. Each word's vector is the sum of its
/// word and context factors, `(U + V) √Σ`. Words without any co-occurrence
/// get zero vectors.
pub fn train_internal_embeddings(
    docs: &[TokenizedDocument],
    dim: usize,
    window: usize,
) -> Result<HashMap<String, EmbeddingVector>> {
    if docs.iter().all(|d| d.tokens.is_empty()) {
        return Err(Error::invalid("training corpus has no tokens"));
    }
    if dim < 2 {
        return Err(Error::invalid("embedding dimension must be at least 2"));
    }
    if window == 0 {
        return Err(Error::invalid("window must be at least 1"));
    }
    let vocab: Vec<&str> = docs
        .iter()
        .flat_map(|d| d.tokens.iter().map(String::as_str))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if vocab.len() < dim {
        return Err(Error::invalid(format!(
            "vocabulary of {} words is smaller than the requested dimension {dim}",
            vocab.len()
        )));
    }
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, w)| (*w, i)).collect();

    let mut counts: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for d in docs {
        let ids: Vec<usize> = d.tokens.iter().map(|t| index[t.as_str()]).collect();
        for (i, &a) in ids.iter().enumerate() {
            for &b in ids.iter().skip(i + 1).take(window) {
                *counts.entry((a, b)).or_default() += 1.0;
                *counts.entry((b, a)).or_default() += 1.0;
            }
        }
    }
    let mut row_sums = vec![0.0; vocab.len()];
    for (&(a, _), &c) in &counts {
        row_sums[a] += c;
    }
    let total: f64 = row_sums.iter().sum();
    let ppmi: Vec<(usize, usize, f64)> = counts
        .iter()
        .filter_map(|(&(a, b), &c)| {
            let pmi = (c * total / (row_sums[a] * row_sums[b])).ln();
            (pmi > 0.0).then_some((a, b, pmi))
        })
        .collect();
    let m = SparseMatrix::from_triplets(vocab.len(), vocab.len(), ppmi)?;
    let svd = truncated_svd(&m, dim, 0x5eed);
    let k = svd.s.len();
    vocab
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let mut v: Vec<f64> = (0..k)
                .map(|j| (svd.u[[i, j]] + svd.vt[[j, i]]) * svd.s[j].sqrt())
                .collect();
            v.resize(dim, 0.0);
            EmbeddingVector::new(v).map(|v| (w.to_string(), v))
        })
        .collect()
}

/// Window-level occurrence counts for a fixed set of words.
#[derive(Debug, Clone, Default)]
struct WindowCounts {
    windows: usize,
    single: HashMap<String, usize>,
    joint: HashMap<(String, String), usize>,
}

fn count_windows(words: &BTreeSet<&str>, reference: &[TokenizedDocument], window: usize) -> WindowCounts {
    let mut out = WindowCounts::default();
    for doc in reference {
        let marks: Vec<Option<&str>> = doc
            .tokens
            .iter()
            .map(|t| words.get(t.as_str()).copied())
            .collect();
        if marks.is_empty() {
            continue;
        }
        let n_windows = marks.len().saturating_sub(window) + 1;
        for start in 0..n_windows {
            let end = (start + window).min(marks.len());
            let present: BTreeSet<&str> = marks[start..end].iter().flatten().copied().collect();
            out.windows += 1;
            let present: Vec<&str> = present.into_iter().collect();
            for (i, a) in present.iter().enumerate() {
                *out.single.entry(a.to_string()).or_default() += 1;
                for b in &present[i + 1..] {
                    *out.joint.entry((a.to_string(), b.to_string())).or_default() += 1;
                }
            }
        }
    }
    out
}

impl WindowCounts {
    fn npmi(&self, a: &str, b: &str) -> f64 {
        let key = if a < b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        };
        let joint = self.joint.get(&key).copied().unwrap_or(0);
        if joint == 0 || self.windows == 0 {
            return -1.0;
        }
        let n = self.windows as f64;
        let p_ab = joint as f64 / n;
        if joint == self.windows {
            // both words in every window
            return 1.0;
        }
        let p_a = self.single[a] as f64 / n;
        let p_b = self.single[b] as f64 / n;
        let pmi = ((p_ab + NPMI_EPS) / (p_a * p_b)).ln();
        (pmi / -(p_ab + NPMI_EPS).ln()).clamp(-1.0, 1.0)
    }
}

/// Per-topic mean pairwise NPMI from sliding windows of `window` tokens
/// inside each reference document (a shorter document is one window).
pub fn npmi_coherence_per_topic(
    desc: &TopicDescriptions,
    reference: &[TokenizedDocument],
    window: usize,
) -> Result<Vec<Option<f64>>> {
    if window == 0 {
        return Err(Error::invalid("window must be at least 1"));
    }
    let counts = count_windows(&desc.words(), reference, window);
    desc.topics
        .iter()
        .map(|t| pair_mean(t, |a, b| Ok(counts.npmi(a, b))))
        .collect()
}

pub fn npmi_coherence(desc: &TopicDescriptions, reference: &[TokenizedDocument], window: usize) -> Result<f64> {
    overall(&npmi_coherence_per_topic(desc, reference, window)?)
}
