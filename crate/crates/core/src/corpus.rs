//! Document ingestion, tokenization and time slicing.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::{DateTime, Duration, DurationRound, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, Result};

/// One timestamped text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub timestamp: DateTime<Utc>,
    pub source: String,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        timestamp: DateTime<Utc>,
        source: impl Into<String>,
    ) -> Result<Self> {
        let id = id.into();
        let text = text.into();
        if id.is_empty() {
            return Err(Error::InvalidDocument {
                id,
                reason: "empty id".into(),
            });
        }
        if text.trim().is_empty() {
            return Err(Error::InvalidDocument {
                id,
                reason: "empty text".into(),
            });
        }
        Ok(Document {
            id,
            text,
            timestamp: timestamp.trunc_subsecs(0),
            source: source.into(),
        })
    }
}

#[derive(Deserialize)]
struct RawDocument {
    id: String,
    text: String,
    timestamp: String,
    source: String,
}

/// How repeated ids in a corpus file are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DuplicatePolicy {
    /// Every id must be unique.
    #[default]
    Reject,
    /// The same id may recur at different timestamps (repeated scrapes); only
    /// an exact `(id, timestamp)` repeat is rejected.
    KeepObservations,
}

/// Reads a corpus JSONL file, rejecting repeated ids.
pub fn ingest_jsonl(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    ingest_jsonl_with(path, DuplicatePolicy::Reject)
}

pub fn ingest_jsonl_with(path: impl AsRef<Path>, policy: DuplicatePolicy) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    let mut seen: HashSet<(String, Option<DateTime<Utc>>)> = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let raw: RawDocument =
            serde_json::from_str(&line).map_err(|e| parse_err(format!("malformed record: {e}")))?;
        let timestamp = DateTime::parse_from_rfc3339(&raw.timestamp)
            .map_err(|e| parse_err(format!("bad timestamp `{}`: {e}", raw.timestamp)))?
            .with_timezone(&Utc);
        let doc = Document::new(raw.id, raw.text, timestamp, raw.source)?;
        let key = match policy {
            DuplicatePolicy::Reject => (doc.id.clone(), None),
            DuplicatePolicy::KeepObservations => (doc.id.clone(), Some(doc.timestamp)),
        };
        if !seen.insert(key) {
            return Err(Error::DuplicateId(doc.id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Unique row label per document: the id, or `id@timestamp` for ids observed
/// more than once.
pub fn row_labels(docs: &[Document]) -> Vec<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for d in docs {
        *counts.entry(d.id.as_str()).or_default() += 1;
    }
    docs.iter()
        .map(|d| {
            if counts[d.id.as_str()] > 1 {
                format!("{}@{}", d.id, d.timestamp.to_rfc3339())
            } else {
                d.id.clone()
            }
        })
        .collect()
}

/// Dictionary for greedy longest-match segmentation. Entries are matched
/// case-insensitively.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    words: HashSet<String>,
    max_chars: usize,
}

impl Lexicon {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut lex = Lexicon::default();
        for w in words {
            let w = w.as_ref().trim().to_lowercase();
            if w.is_empty() {
                continue;
            }
            lex.max_chars = lex.max_chars.max(w.chars().count());
            lex.words.insert(w);
        }
        lex
    }

    /// One entry per line; anything after the first whitespace (e.g. a
    /// frequency column) is ignored.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Lexicon::new(
            text.lines().filter_map(|l| l.split_whitespace().next()),
        ))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    /// Forward maximum matching. Characters not covered by any entry become
    /// single-character segments, so the output concatenates to `text`.
    pub fn segment<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let bounds: Vec<usize> = text
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(text.len()))
            .collect();
        let n_chars = bounds.len() - 1;
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < n_chars {
            let longest = self.max_chars.min(n_chars - pos);
            let mut step = 1;
            for len in (2..=longest).rev() {
                let cand = &text[bounds[pos]..bounds[pos + len]];
                if self.words.contains(&cand.to_lowercase()) {
                    step = len;
                    break;
                }
            }
            out.push(&text[bounds[pos]..bounds[pos + step]]);
            pos += step;
        }
        out
    }
}

/// Word segmentation strategy.
#[derive(Debug, Clone)]
pub enum Segmenter {
    /// Unicode word boundaries; for space-delimited scripts.
    Unicode,
    /// Greedy longest match over a lexicon; for unsegmented scripts.
    Dictionary(Lexicon),
}

impl Segmenter {
    pub fn segment<'a>(&self, text: &'a str) -> Result<Vec<&'a str>> {
        match self {
            Segmenter::Unicode => Ok(text.unicode_words().collect()),
            Segmenter::Dictionary(lex) if lex.is_empty() => Err(Error::EmptyLexicon),
            Segmenter::Dictionary(lex) => Ok(lex.segment(text)),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Stopwords(
            words
                .into_iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
        )
    }

    /// One token per line; lines starting with `#` are comments.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Stopwords::new(
            text.lines().filter(|l| !l.trim_start().starts_with('#')),
        ))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDocument {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

fn is_content(token: &str) -> bool {
    token.chars().any(char::is_alphanumeric)
}

pub fn tokenize(doc: &Document, segmenter: &Segmenter, stopwords: &Stopwords) -> Result<TokenizedDocument> {
    tokenize_text(&doc.id, &doc.text, segmenter, stopwords)
}

pub fn tokenize_text(
    doc_id: &str,
    text: &str,
    segmenter: &Segmenter,
    stopwords: &Stopwords,
) -> Result<TokenizedDocument> {
    let tokens = segmenter
        .segment(text)?
        .into_iter()
        .filter(|t| is_content(t))
        .map(str::to_lowercase)
        .filter(|t| !stopwords.contains(t))
        .collect();
    Ok(TokenizedDocument {
        doc_id: doc_id.to_string(),
        tokens,
    })
}

/// Fixed-width time bucketing anchored at `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeSliceSpec {
    origin: DateTime<Utc>,
    width: Duration,
}

impl TimeSliceSpec {
    pub const DEFAULT_WIDTH_HOURS: i64 = 6;

    pub fn new(origin: DateTime<Utc>, width: Duration) -> Result<Self> {
        if width <= Duration::zero() {
            return Err(Error::invalid("slice width must be positive"));
        }
        Ok(TimeSliceSpec { origin, width })
    }

    /// Origin at the earliest timestamp truncated to the hour.
    pub fn from_corpus(docs: &[Document], width: Duration) -> Result<Self> {
        Self::from_timestamps(docs.iter().map(|d| d.timestamp), width)
    }

    pub fn from_timestamps(stamps: impl IntoIterator<Item = DateTime<Utc>>, width: Duration) -> Result<Self> {
        let earliest = stamps
            .into_iter()
            .min()
            .ok_or_else(|| Error::invalid("cannot derive a slice origin from an empty corpus"))?;
        let origin = earliest
            .duration_trunc(Duration::hours(1))
            .map_err(|e| Error::invalid(format!("cannot truncate {earliest}: {e}")))?;
        Self::new(origin, width)
    }

    pub fn origin(&self) -> DateTime<Utc> {
        self.origin
    }

    pub fn width(&self) -> Duration {
        self.width
    }

    /// `floor((ts - origin) / width)`, or `None` before the origin.
    pub fn index_of(&self, ts: DateTime<Utc>) -> Option<u64> {
        let offset = (ts - self.origin).num_milliseconds();
        if offset < 0 {
            return None;
        }
        Some((offset / self.width.num_milliseconds()) as u64)
    }

    pub fn start_of(&self, index: u64) -> DateTime<Utc> {
        self.origin + self.width * index as i32
    }
}

/// Slice index → positions into the input, ascending, with empty slices
/// between the first and last occupied slice materialized.
pub fn slice_positions(
    timestamps: &[(String, DateTime<Utc>)],
    spec: &TimeSliceSpec,
) -> Result<BTreeMap<u64, Vec<usize>>> {
    let mut slices: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (pos, (id, ts)) in timestamps.iter().enumerate() {
        let idx = spec
            .index_of(*ts)
            .ok_or_else(|| Error::BeforeOrigin(id.clone()))?;
        slices.entry(idx).or_default().push(pos);
    }
    if let (Some(&first), Some(&last)) = (slices.keys().next(), slices.keys().next_back()) {
        for idx in first..=last {
            slices.entry(idx).or_default();
        }
    }
    Ok(slices)
}

pub fn slice_corpus(docs: &[Document], spec: &TimeSliceSpec) -> Result<BTreeMap<u64, Vec<String>>> {
    let stamps: Vec<_> = docs.iter().map(|d| (d.id.clone(), d.timestamp)).collect();
    Ok(slice_positions(&stamps, spec)?
        .into_iter()
        .map(|(idx, rows)| (idx, rows.into_iter().map(|r| docs[r].id.clone()).collect()))
        .collect())
}

/// Keeps the first observation of each id within each slice.
pub fn dedupe_within_slices(docs: Vec<Document>, spec: &TimeSliceSpec) -> Result<Vec<Document>> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(docs.len());
    for d in docs {
        let idx = spec
            .index_of(d.timestamp)
            .ok_or_else(|| Error::BeforeOrigin(d.id.clone()))?;
        if seen.insert((d.id.clone(), idx)) {
            out.push(d);
        }
    }
    Ok(out)
}
