//! The staged workflow behind the `keynmf` binary: fit, dynamic, infodyn,
//! eval and sweep. Every stage writes into its own output directory, which
//! ends up holding exactly one `manifest.json`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::corpus::{
    dedupe_within_slices, ingest_jsonl_with, row_labels, slice_positions, tokenize_text, Document,
    DuplicatePolicy, Lexicon, Segmenter, Stopwords, TimeSliceSpec, TokenizedDocument,
};
use crate::dynamic::{all_top_words, DynamicModel, SliceRows};
use crate::embed::{
    embed_batch, embed_vocabulary, CachedProvider, EmbeddingProvider, HashEmbedder, HttpConfig, HttpEmbedder,
    PrecomputedStore,
};
use crate::error::{Error, Result};
use crate::infodyn::{resonance_series, SignalSeries};
use crate::keywords::{build_keyword_matrix, keyword_sets_from_vectors, KeywordMatrix};
use crate::matrix::read_matrix;
use crate::metrics::{
    diversity, embedding_coherence_per_topic, npmi_coherence_per_topic, train_internal_embeddings,
    TopicDescriptions,
};
use crate::nmf::{fit_nmf, SolverConfig, TopicModel};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".keynmf.lock";
pub const KEYWORD_STEM: &str = "keywords";
/// Top words per topic in printed and exported descriptions.
pub const TOP_WORDS: usize = 10;

/// A library error tagged with the stage it came from.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

impl StageError {
    /// Bad arguments or bad input data, as opposed to a runtime failure.
    pub fn is_usage(&self) -> bool {
        self.stage == "config"
            || matches!(
                self.source,
                Error::Parse { .. }
                    | Error::InvalidDocument { .. }
                    | Error::DuplicateId(_)
                    | Error::BeforeOrigin(_)
                    | Error::EmptyLexicon
                    | Error::TooShort { .. }
            )
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

trait InStage<T> {
    fn stage(self, stage: &'static str) -> StageResult<T>;
}

impl<T> InStage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> StageResult<T> {
        self.map_err(|source| StageError { stage, source })
    }
}

fn config_err(msg: impl Into<String>) -> StageError {
    StageError {
        stage: "config",
        source: Error::InvalidArgument(msg.into()),
    }
}

fn require_file(path: &Path) -> StageResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(StageError {
            stage: "config",
            source: Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)),
        })
    }
}

fn require_dir(path: &Path) -> StageResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(StageError {
            stage: "config",
            source: Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)),
        })
    }
}

// ---------------------------------------------------------------------------
// Small parsers shared with the CLI

/// Parses `90s`, `30m`, `6h` or `2d`.
pub fn parse_duration(s: &str) -> Result<Duration> {
    let s = s.trim();
    let split = s
        .find(|c: char| !c.is_ascii_digit())
        .ok_or_else(|| Error::invalid(format!("duration `{s}` needs a unit (s, m, h, d)")))?;
    let (num, unit) = s.split_at(split);
    let n: i64 = num
        .parse()
        .map_err(|_| Error::invalid(format!("bad duration `{s}`")))?;
    let d = match unit {
        "s" => Duration::seconds(n),
        "m" => Duration::minutes(n),
        "h" => Duration::hours(n),
        "d" => Duration::days(n),
        _ => return Err(Error::invalid(format!("unknown duration unit `{unit}` in `{s}`"))),
    };
    if d <= Duration::zero() {
        return Err(Error::invalid("duration must be positive"));
    }
    Ok(d)
}

pub fn format_duration(d: Duration) -> String {
    let secs = d.num_seconds();
    for (unit, size) in [("d", 86_400), ("h", 3_600), ("m", 60)] {
        if secs % size == 0 {
            return format!("{}{unit}", secs / size);
        }
    }
    format!("{secs}s")
}

fn ser_duration<S: Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format_duration(*d))
}

fn iso(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn parse_iso(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::invalid(format!("bad timestamp `{s}`: {e}")))
}

/// Where embeddings come from: `precomputed:PATH`, `http:URL` or `test:SEED`.
///
/// A precomputed store is a matrix file at `PATH` plus an id file next to it
/// with the extension replaced by `ids.txt` (`emb.knmf` → `emb.ids.txt`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbeddingSource {
    Precomputed(PathBuf),
    Http(String),
    Test(u64),
}

impl FromStr for EmbeddingSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("embedding source `{s}` must be precomputed:PATH, http:URL or test:SEED")))?;
        match kind {
            "precomputed" if !rest.is_empty() => Ok(EmbeddingSource::Precomputed(rest.into())),
            // `http://host` and `https://host` are accepted as-is
            "http" | "https" if rest.starts_with("//") => Ok(EmbeddingSource::Http(s.to_string())),
            "http" if rest.contains("://") => Ok(EmbeddingSource::Http(rest.to_string())),
            "http" if !rest.is_empty() => Ok(EmbeddingSource::Http(format!("http://{rest}"))),
            "test" => rest
                .parse()
                .map(EmbeddingSource::Test)
                .map_err(|_| Error::invalid(format!("test embedder seed `{rest}` is not an unsigned integer"))),
            _ => Err(Error::invalid(format!(
                "embedding source `{s}` must be precomputed:PATH, http:URL or test:SEED"
            ))),
        }
    }
}

impl fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbeddingSource::Precomputed(p) => write!(f, "precomputed:{}", p.display()),
            EmbeddingSource::Http(u) => write!(f, "http:{u}"),
            EmbeddingSource::Test(s) => write!(f, "test:{s}"),
        }
    }
}

impl Serialize for EmbeddingSource {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl EmbeddingSource {
    pub fn ids_path(matrix: &Path) -> PathBuf {
        matrix.with_extension("ids.txt")
    }

    /// Input files whose digests belong in a manifest.
    fn files(&self) -> Vec<(String, PathBuf)> {
        match self {
            EmbeddingSource::Precomputed(p) => vec![
                ("embeddings".into(), p.clone()),
                ("embedding_ids".into(), Self::ids_path(p)),
            ],
            _ => Vec::new(),
        }
    }

    fn check(&self) -> StageResult<()> {
        for (_, p) in self.files() {
            require_file(&p)?;
        }
        Ok(())
    }

    /// HTTP providers are wrapped in the on-disk cache.
    pub fn provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match self {
            EmbeddingSource::Precomputed(p) => Box::new(PrecomputedStore::load(p, Self::ids_path(p))?),
            EmbeddingSource::Http(url) => Box::new(CachedProvider::new(
                HttpEmbedder::new(url.clone(), HttpConfig::default()),
                CachedProvider::<HttpEmbedder>::default_dir(),
            )),
            EmbeddingSource::Test(seed) => Box::new(HashEmbedder::new(*seed, HashEmbedder::DEFAULT_DIM)),
        })
    }
}

/// `START..END` or `START..END:STEP`, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KeywordRange {
    pub start: usize,
    pub end: usize,
    pub step: usize,
}

impl Default for KeywordRange {
    fn default() -> Self {
        KeywordRange {
            start: 5,
            end: 100,
            step: 5,
        }
    }
}

impl KeywordRange {
    pub fn values(&self) -> Vec<usize> {
        (self.start..=self.end).step_by(self.step).collect()
    }
}

impl FromStr for KeywordRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("keyword range `{s}` must look like 5..100 or 5..100:5"));
        let (range, step) = match s.split_once(':') {
            Some((r, st)) => (r, st.parse().map_err(|_| bad())?),
            None => (s, 5),
        };
        let (a, b) = range.split_once("..").ok_or_else(bad)?;
        let start: usize = a.parse().map_err(|_| bad())?;
        let end: usize = b.parse().map_err(|_| bad())?;
        if start == 0 || end < start || step == 0 {
            return Err(bad());
        }
        Ok(KeywordRange { start, end, step })
    }
}

// ---------------------------------------------------------------------------
// Manifest and output directory handling

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Provenance record written next to every set of outputs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, InputDigest>,
    pub timings: Vec<StageTiming>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, config: &impl Serialize) -> Self {
        RunManifest {
            command: command.into(),
            tool_version: TOOL_VERSION.into(),
            config: serde_json::to_value(config).expect("serializable config"),
            inputs: BTreeMap::new(),
            timings: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn add_input(&mut self, role: impl Into<String>, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.insert(
            role.into(),
            InputDigest {
                path: path.display().to_string(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            },
        );
        Ok(())
    }

    /// Runs `f`, recording its wall-clock time under `stage`.
    fn timed<T>(&mut self, stage: &'static str, f: impl FnOnce() -> StageResult<T>) -> StageResult<T> {
        let t0 = Instant::now();
        let out = f()?;
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path,
            line: e.line(),
            message: e.to_string(),
        })
    }

    fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }
}

/// Exclusive claim on an output directory for the lifetime of one run.
struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    fn acquire(dir: &Path, command: &str) -> StageResult<Self> {
        if let Ok(existing) = RunManifest::load(dir) {
            if existing.command != command {
                return Err(config_err(format!(
                    "{} already holds `{}` outputs; use a separate directory for `{command}`",
                    dir.display(),
                    existing.command
                )));
            }
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)).stage("output")?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(OutputLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::invalid(format!(
                "{} is in use by another run (remove {} if that run is gone)",
                dir.display(),
                path.display()
            )))
            .stage("output"),
            Err(e) => Err(Error::io(&path, e)).stage("output"),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, &item).expect("serializable");
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Corpus preparation

#[derive(Debug, Clone, Serialize)]
pub struct CorpusOptions {
    pub corpus: PathBuf,
    pub lexicon: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    /// Keep only the first observation of an id within each time slice.
    pub dedupe: bool,
    #[serde(serialize_with = "ser_duration")]
    pub slice_width: Duration,
    pub origin: Option<DateTime<Utc>>,
}

impl CorpusOptions {
    pub fn new(corpus: impl Into<PathBuf>) -> Self {
        CorpusOptions {
            corpus: corpus.into(),
            lexicon: None,
            stopwords: None,
            dedupe: false,
            slice_width: Duration::hours(TimeSliceSpec::DEFAULT_WIDTH_HOURS),
            origin: None,
        }
    }

    fn check(&self) -> StageResult<()> {
        require_file(&self.corpus)?;
        for p in self.lexicon.iter().chain(&self.stopwords) {
            require_file(p)?;
        }
        Ok(())
    }

    fn record_inputs(&self, manifest: &mut RunManifest) -> Result<()> {
        manifest.add_input("corpus", &self.corpus)?;
        if let Some(p) = &self.lexicon {
            manifest.add_input("lexicon", p)?;
        }
        if let Some(p) = &self.stopwords {
            manifest.add_input("stopwords", p)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct PreparedCorpus {
    docs: Vec<Document>,
    labels: Vec<String>,
    tokens: Vec<TokenizedDocument>,
}

#[derive(Serialize, Deserialize)]
struct RowRecord {
    row: String,
    id: String,
    timestamp: String,
    source: String,
}

fn prepare_corpus(opts: &CorpusOptions) -> Result<PreparedCorpus> {
    let mut docs = ingest_jsonl_with(&opts.corpus, DuplicatePolicy::KeepObservations)?;
    if docs.is_empty() {
        return Err(Error::invalid(format!("corpus {} has no documents", opts.corpus.display())));
    }
    if opts.dedupe {
        let spec = match opts.origin {
            Some(o) => TimeSliceSpec::new(o, opts.slice_width)?,
            None => TimeSliceSpec::from_corpus(&docs, opts.slice_width)?,
        };
        docs = dedupe_within_slices(docs, &spec)?;
    }
    let segmenter = match &opts.lexicon {
        Some(p) => Segmenter::Dictionary(Lexicon::load(p)?),
        None => Segmenter::Unicode,
    };
    let stopwords = match &opts.stopwords {
        Some(p) => Stopwords::load(p)?,
        None => Stopwords::default(),
    };
    let labels = row_labels(&docs);
    let tokens = docs
        .par_iter()
        .zip(labels.par_iter())
        .map(|(d, l)| tokenize_text(l, &d.text, &segmenter, &stopwords))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedCorpus { docs, labels, tokens })
}

/// Document and word vectors for one prepared corpus.
struct EmbeddedCorpus {
    docs: Vec<crate::embed::EmbeddingVector>,
    words: HashMap<String, crate::embed::EmbeddingVector>,
}

fn embed_corpus(prep: &PreparedCorpus, provider: &dyn EmbeddingProvider) -> Result<EmbeddedCorpus> {
    let texts: Vec<&str> = prep.docs.iter().map(|d| d.text.as_str()).collect();
    let docs = embed_batch(provider, &texts)?;
    let words = embed_vocabulary(provider, prep.tokens.iter().flat_map(|d| d.tokens.iter().cloned()))?;
    Ok(EmbeddedCorpus { docs, words })
}

fn keyword_matrix(prep: &PreparedCorpus, emb: &EmbeddedCorpus, n: usize) -> Result<KeywordMatrix> {
    let sets = keyword_sets_from_vectors(&prep.tokens, &emb.docs, &emb.words, n)?;
    let km = build_keyword_matrix(&sets)?;
    if km.n_words() == 0 {
        return Err(Error::invalid("no document produced a keyword with positive similarity"));
    }
    Ok(km)
}

// ---------------------------------------------------------------------------
// fit

#[derive(Debug, Clone, Serialize)]
pub struct FitConfig {
    pub input: CorpusOptions,
    pub embeddings: EmbeddingSource,
    pub n_keywords: usize,
    pub solver: SolverConfig,
}

impl FitConfig {
    fn check(&self) -> StageResult<()> {
        self.input.check()?;
        self.embeddings.check()?;
        if self.n_keywords == 0 {
            return Err(config_err("--n-keywords must be at least 1"));
        }
        if self.solver.k == 0 {
            return Err(config_err("--k must be at least 1"));
        }
        if !(self.solver.rel_tol > 0.0) {
            return Err(config_err("--rel-tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: TopicModel,
    pub keywords: KeywordMatrix,
    pub top_words: Vec<Vec<String>>,
    pub manifest: RunManifest,
}

/// Ingest, embed, extract keywords and factorize. Writes the keyword matrix
/// (`keywords.*`), the model (`W.knmf`, `H.knmf`, `vocab.txt`,
/// `model.json`), `rows.jsonl`, `tokens.jsonl` and the manifest.
pub fn cmd_fit(cfg: &FitConfig, out: &Path) -> StageResult<FitOutput> {
    cfg.check()?;
    let _lock = OutputLock::acquire(out, "fit")?;
    let mut manifest = RunManifest::new("fit", cfg);
    cfg.input.record_inputs(&mut manifest).stage("ingest")?;
    for (role, p) in cfg.embeddings.files() {
        manifest.add_input(role, &p).stage("embed")?;
    }

    let prep = manifest.timed("ingest", || prepare_corpus(&cfg.input).stage("ingest"))?;
    let emb = manifest.timed("embed", || {
        let provider = cfg.embeddings.provider().stage("embed")?;
        embed_corpus(&prep, provider.as_ref()).stage("embed")
    })?;
    let keywords = manifest.timed("keywords", || keyword_matrix(&prep, &emb, cfg.n_keywords).stage("keywords"))?;
    let model = manifest.timed("fit", || fit_nmf(&keywords, &cfg.solver).stage("fit"))?;
    let top_words = all_top_words(&model, None, TOP_WORDS).stage("fit")?;

    let empty_rows = (0..keywords.n_docs()).filter(|&r| keywords.matrix.row_nnz(r) == 0).count();
    if empty_rows > 0 {
        manifest
            .warnings
            .push(format!("{empty_rows} document(s) have no keyword with positive similarity"));
    }
    if model.iterations_run == cfg.solver.max_iter {
        manifest
            .warnings
            .push(format!("solver stopped at max_iter = {} before reaching rel_tol", cfg.solver.max_iter));
    }

    manifest.timed("write", || {
        keywords.save(out, KEYWORD_STEM).stage("write")?;
        model.save(out).stage("write")?;
        let rows = prep.docs.iter().zip(&prep.labels).map(|(d, l)| RowRecord {
            row: l.clone(),
            id: d.id.clone(),
            timestamp: iso(d.timestamp),
            source: d.source.clone(),
        });
        write_jsonl(&out.join("rows.jsonl"), rows).stage("write")?;
        write_jsonl(&out.join("tokens.jsonl"), &prep.tokens).stage("write")?;
        write_topics(&out.join("topics.jsonl"), &model).stage("write")
    })?;
    manifest.write(out).stage("write")?;
    Ok(FitOutput {
        model,
        keywords,
        top_words,
        manifest,
    })
}

fn write_topics(path: &Path, model: &TopicModel) -> Result<()> {
    #[derive(Serialize)]
    struct Line {
        topic: usize,
        words: Vec<String>,
        weights: Vec<f64>,
    }
    let lines = (0..model.k)
        .map(|t| {
            let top = crate::dynamic::topic_top_words(model, t, None, TOP_WORDS)?;
            Ok(Line {
                topic: t,
                words: top.iter().map(|(w, _)| w.clone()).collect(),
                weights: top.iter().map(|(_, v)| *v).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(path, lines)
}

// ---------------------------------------------------------------------------
// dynamic

#[derive(Debug, Clone, Serialize)]
pub struct DynamicConfig {
    pub model_dir: PathBuf,
    #[serde(serialize_with = "ser_duration")]
    pub slice_width: Duration,
    pub origin: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SliceInfo {
    pub index: u64,
    pub start: String,
    pub documents: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct DynamicOutput {
    pub model: DynamicModel,
    pub slices: Vec<SliceInfo>,
    pub manifest: RunManifest,
}

const MODEL_FILES: [&str; 7] = [
    "W.knmf",
    "H.knmf",
    "vocab.txt",
    "model.json",
    "keywords.knmf",
    "keywords.vocab.txt",
    "keywords.docs.txt",
];

/// Re-estimates topics per time slice against a fitted model directory.
/// Writes `P_hat.csv`, `P_hat.knmf`, `I.knmf`, `H_t/`, `top_words.jsonl`,
/// `slices.json` and the manifest.
pub fn cmd_dynamic(cfg: &DynamicConfig, out: &Path) -> StageResult<DynamicOutput> {
    require_dir(&cfg.model_dir)?;
    for f in MODEL_FILES.iter().chain(&["rows.jsonl"]) {
        require_file(&cfg.model_dir.join(f))?;
    }
    if cfg.slice_width <= Duration::zero() {
        return Err(config_err("--slice-width must be positive"));
    }
    let _lock = OutputLock::acquire(out, "dynamic")?;
    let mut manifest = RunManifest::new("dynamic", cfg);
    for f in MODEL_FILES.iter().chain(&["rows.jsonl"]) {
        manifest.add_input(format!("model/{f}"), &cfg.model_dir.join(f)).stage("load")?;
    }

    let (base, km, rows) = manifest.timed("load", || {
        let base = TopicModel::load(&cfg.model_dir).stage("load")?;
        let km = KeywordMatrix::load(&cfg.model_dir, KEYWORD_STEM).stage("load")?;
        let rows: Vec<RowRecord> = read_jsonl(&cfg.model_dir.join("rows.jsonl")).stage("load")?;
        let labels: Vec<&str> = rows.iter().map(|r| r.row.as_str()).collect();
        if labels != km.doc_ids.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(StageError {
                stage: "load",
                source: Error::invalid("rows.jsonl does not match the keyword matrix rows"),
            });
        }
        Ok((base, km, rows))
    })?;

    let (spec, slice_rows) = manifest.timed("slice", || {
        let stamps = rows
            .iter()
            .map(|r| parse_iso(&r.timestamp).map(|t| (r.row.clone(), t)))
            .collect::<Result<Vec<_>>>()
            .stage("slice")?;
        let spec = match cfg.origin {
            Some(o) => TimeSliceSpec::new(o, cfg.slice_width),
            None => TimeSliceSpec::from_timestamps(stamps.iter().map(|(_, t)| *t), cfg.slice_width),
        }
        .stage("slice")?;
        let positions = slice_positions(&stamps, &spec).stage("slice")?;
        if positions.is_empty() {
            return Err(StageError {
                stage: "slice",
                source: Error::invalid("the corpus yields no time slices"),
            });
        }
        let slice_rows: Vec<SliceRows> = positions
            .into_iter()
            .map(|(index, rows)| SliceRows { index, rows })
            .collect();
        Ok((spec, slice_rows))
    })?;

    let cfg_solver = base.config.clone();
    let model = manifest.timed("fit", || {
        DynamicModel::from_base(base, &km, &slice_rows, &cfg_solver).stage("fit")
    })?;

    let starts: Vec<DateTime<Utc>> = model.slices.iter().map(|&i| spec.start_of(i)).collect();
    let slices: Vec<SliceInfo> = model
        .slices
        .iter()
        .zip(&starts)
        .enumerate()
        .map(|(pos, (&index, &start))| SliceInfo {
            index,
            start: iso(start),
            documents: model.doc_counts[pos],
            degenerate: model.degenerate[pos],
        })
        .collect();
    let degenerate: Vec<String> = slices
        .iter()
        .filter(|s| s.degenerate)
        .map(|s| s.index.to_string())
        .collect();
    if !degenerate.is_empty() {
        manifest.warnings.push(format!(
            "{} slice(s) without topic mass were given a uniform distribution: {}",
            degenerate.len(),
            degenerate.join(", ")
        ));
    }

    manifest.timed("write", || {
        model.save_matrices(out).stage("write")?;
        model.write_p_hat_csv(out.join("P_hat.csv"), &starts).stage("write")?;
        model.write_top_words_jsonl(out.join("top_words.jsonl"), TOP_WORDS).stage("write")?;
        write_json(&out.join("slices.json"), &slices).stage("write")
    })?;
    manifest.write(out).stage("write")?;
    Ok(DynamicOutput {
        model,
        slices,
        manifest,
    })
}

// ---------------------------------------------------------------------------
// infodyn

#[derive(Debug, Clone, Serialize)]
pub struct InfodynConfig {
    pub dynamic_dir: PathBuf,
    pub window: usize,
    pub span: usize,
    pub degree: usize,
    /// Optional JSONL of `{label, start, end}` periods echoed into the output.
    pub events: Option<PathBuf>,
}

/// A labelled period for plot shading.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EventWindow {
    pub label: String,
    pub start: String,
    pub end: String,
}

fn read_events(path: &Path) -> Result<Vec<EventWindow>> {
    let raw: Vec<EventWindow> = read_jsonl(path)?;
    raw.into_iter()
        .enumerate()
        .map(|(i, e)| {
            let bad = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let start = parse_iso(&e.start).map_err(|err| bad(err.to_string()))?;
            let end = parse_iso(&e.end).map_err(|err| bad(err.to_string()))?;
            if end < start {
                return Err(bad(format!("event `{}` ends before it starts", e.label)));
            }
            Ok(EventWindow {
                label: e.label,
                start: iso(start),
                end: iso(end),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct InfodynOutput {
    pub signals: SignalSeries,
    pub manifest: RunManifest,
}

/// Novelty, transience and resonance over a dynamic directory's P̂, with
/// smoothed novelty and resonance. Writes `signals.csv`, `events.jsonl`
/// when events are given, and the manifest.
pub fn cmd_infodyn(cfg: &InfodynConfig, out: &Path) -> StageResult<InfodynOutput> {
    require_dir(&cfg.dynamic_dir)?;
    for f in ["P_hat.knmf", "slices.json"] {
        require_file(&cfg.dynamic_dir.join(f))?;
    }
    if let Some(e) = &cfg.events {
        require_file(e)?;
    }
    if cfg.window == 0 {
        return Err(config_err("--window must be at least 1"));
    }
    if cfg.span == 0 {
        return Err(config_err("--span must be at least 1"));
    }
    let _lock = OutputLock::acquire(out, "infodyn")?;
    let mut manifest = RunManifest::new("infodyn", cfg);
    for f in ["P_hat.knmf", "slices.json"] {
        manifest.add_input(format!("dynamic/{f}"), &cfg.dynamic_dir.join(f)).stage("load")?;
    }
    if let Some(e) = &cfg.events {
        manifest.add_input("events", e).stage("load")?;
    }

    let (p_hat, times, events) = manifest.timed("load", || {
        let p_hat = read_matrix(cfg.dynamic_dir.join("P_hat.knmf")).stage("load")?.into_dense();
        let slices_path = cfg.dynamic_dir.join("slices.json");
        let text = std::fs::read_to_string(&slices_path)
            .map_err(|e| Error::io(&slices_path, e))
            .stage("load")?;
        let slices: Vec<SliceInfo> = serde_json::from_str(&text)
            .map_err(|e| Error::Parse {
                path: slices_path.clone(),
                line: e.line(),
                message: e.to_string(),
            })
            .stage("load")?;
        if slices.len() != p_hat.nrows() {
            return Err(StageError {
                stage: "load",
                source: Error::DimensionMismatch {
                    expected: p_hat.nrows(),
                    got: slices.len(),
                },
            });
        }
        let times = slices
            .iter()
            .map(|s| parse_iso(&s.start))
            .collect::<Result<Vec<_>>>()
            .stage("load")?;
        let events = cfg.events.as_deref().map(read_events).transpose().stage("load")?;
        Ok((p_hat, times, events))
    })?;

    let (signals, skipped) = manifest.timed("signals", || {
        let mut s = resonance_series(p_hat.view(), cfg.window)
            .map_err(|e| match e {
                Error::TooShort { got, .. } => Error::TooShort {
                    required: 2 * cfg.window + 1,
                    got,
                },
                other => other,
            })
            .stage("signals")?;
        let skipped = s.smooth(cfg.span, cfg.degree).stage("signals")?;
        Ok((s, skipped))
    })?;
    for name in skipped {
        manifest.warnings.push(format!(
            "{name} has fewer than 2·span+1 = {} defined points; smoothed column left empty",
            2 * cfg.span + 1
        ));
    }

    manifest.timed("write", || {
        signals.write_csv(out.join("signals.csv"), &times).stage("write")?;
        if let Some(ev) = &events {
            write_jsonl(&out.join("events.jsonl"), ev).stage("write")?;
        }
        Ok(())
    })?;
    manifest.write(out).stage("write")?;
    Ok(InfodynOutput { signals, manifest })
}

// ---------------------------------------------------------------------------
// eval and sweep

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EvalOptions {
    pub top_words: usize,
    pub npmi_window: usize,
    pub internal_dim: usize,
    pub ppmi_window: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            top_words: TOP_WORDS,
            npmi_window: crate::metrics::DEFAULT_NPMI_WINDOW,
            internal_dim: crate::metrics::DEFAULT_INTERNAL_DIM,
            ppmi_window: crate::metrics::DEFAULT_PPMI_WINDOW,
        }
    }
}

impl EvalOptions {
    fn check(&self) -> StageResult<()> {
        if self.top_words == 0 || self.npmi_window == 0 || self.ppmi_window == 0 {
            return Err(config_err("top-words and window sizes must be at least 1"));
        }
        if self.internal_dim < 2 {
            return Err(config_err("--internal-dim must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TopicScores {
    pub topic: usize,
    pub words: Vec<String>,
    pub c_in: Option<f64>,
    pub c_ex: Option<f64>,
    pub c_npmi: Option<f64>,
}

/// Corpus-level scores plus the per-topic breakdown. Coherences are `null`
/// when no topic has a defined value.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EvalReport {
    pub diversity: f64,
    pub c_in: Option<f64>,
    pub c_ex: Option<f64>,
    pub c_npmi: Option<f64>,
    pub topics: Vec<TopicScores>,
}

/// Internal word vectors trained on the evaluation corpus, or `None` with a
/// warning when the corpus is too small.
fn internal_provider(
    tokens: &[TokenizedDocument],
    opts: &EvalOptions,
    warnings: &mut Vec<String>,
) -> Result<Option<PrecomputedStore>> {
    let vocab: std::collections::BTreeSet<&str> = tokens
        .iter()
        .flat_map(|d| d.tokens.iter().map(String::as_str))
        .collect();
    if vocab.len() < 2 {
        warnings.push("vocabulary too small for internal embeddings; c_in omitted".into());
        return Ok(None);
    }
    let dim = opts.internal_dim.min(vocab.len());
    if dim < opts.internal_dim {
        warnings.push(format!(
            "internal embedding dimension reduced from {} to the vocabulary size {dim}",
            opts.internal_dim
        ));
    }
    let vecs = train_internal_embeddings(tokens, dim, opts.ppmi_window)?;
    let map = vecs.into_iter().map(|(w, v)| (w, v.into_inner())).collect();
    PrecomputedStore::from_map("internal-ppmi-svd", map).map(Some)
}

/// Per-topic coherence, leaving a topic undefined when one of its words has
/// a zero vector.
fn coherence_by_topic(
    desc: &TopicDescriptions,
    provider: &dyn EmbeddingProvider,
    label: &str,
    warnings: &mut Vec<String>,
) -> Result<Vec<Option<f64>>> {
    let mut out = Vec::with_capacity(desc.topics().len());
    for (t, words) in desc.topics().iter().enumerate() {
        let single = TopicDescriptions::new(vec![words.clone()])?;
        match embedding_coherence_per_topic(&single, provider) {
            Ok(v) => out.push(v[0]),
            Err(Error::ZeroNorm) => {
                warnings.push(format!("{label}: topic {t} has a word with a zero vector; left undefined"));
                out.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let vals: Vec<f64> = v.iter().flatten().copied().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn evaluate(
    top_words: Vec<Vec<String>>,
    tokens: &[TokenizedDocument],
    internal: Option<&PrecomputedStore>,
    external: &dyn EmbeddingProvider,
    opts: &EvalOptions,
    warnings: &mut Vec<String>,
) -> Result<EvalReport> {
    let desc = TopicDescriptions::new(top_words)?;
    let k = desc.topics().len();
    let c_in = match internal {
        Some(p) => coherence_by_topic(&desc, p, "c_in", warnings)?,
        None => vec![None; k],
    };
    let c_ex = coherence_by_topic(&desc, external, "c_ex", warnings)?;
    let c_npmi = npmi_coherence_per_topic(&desc, tokens, opts.npmi_window)?;
    let topics = desc
        .topics()
        .iter()
        .enumerate()
        .map(|(t, words)| TopicScores {
            topic: t,
            words: words.clone(),
            c_in: c_in[t],
            c_ex: c_ex[t],
            c_npmi: c_npmi[t],
        })
        .collect();
    Ok(EvalReport {
        diversity: diversity(&desc),
        c_in: mean_defined(&c_in),
        c_ex: mean_defined(&c_ex),
        c_npmi: mean_defined(&c_npmi),
        topics,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalConfig {
    pub model_dir: PathBuf,
    /// External embedding source; defaults to the one the model was fitted with.
    pub embeddings: Option<EmbeddingSource>,
    pub options: EvalOptions,
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub manifest: RunManifest,
}

fn fitted_embeddings(model_dir: &Path) -> Result<EmbeddingSource> {
    let m = RunManifest::load(model_dir)?;
    m.config
        .get("embeddings")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::invalid(format!("{} does not record an embedding source", model_dir.display())))?
        .parse()
}

/// Scores a fitted model's top words. Writes `metrics.json` and the manifest.
pub fn cmd_eval(cfg: &EvalConfig, out: &Path) -> StageResult<EvalOutput> {
    require_dir(&cfg.model_dir)?;
    for f in ["H.knmf", "W.knmf", "vocab.txt", "model.json", "tokens.jsonl"] {
        require_file(&cfg.model_dir.join(f))?;
    }
    cfg.options.check()?;
    let source = match &cfg.embeddings {
        Some(s) => s.clone(),
        None => fitted_embeddings(&cfg.model_dir).stage("config")?,
    };
    source.check()?;
    let _lock = OutputLock::acquire(out, "eval")?;
    let mut manifest = RunManifest::new("eval", cfg);
    manifest.config["embeddings"] = serde_json::Value::String(source.to_string());
    for f in ["H.knmf", "vocab.txt", "tokens.jsonl"] {
        manifest.add_input(format!("model/{f}"), &cfg.model_dir.join(f)).stage("load")?;
    }
    for (role, p) in source.files() {
        manifest.add_input(role, &p).stage("load")?;
    }

    let (model, tokens) = manifest.timed("load", || {
        let model = TopicModel::load(&cfg.model_dir).stage("load")?;
        let tokens: Vec<TokenizedDocument> = read_jsonl(&cfg.model_dir.join("tokens.jsonl")).stage("load")?;
        Ok((model, tokens))
    })?;
    let mut warnings = Vec::new();
    let report = manifest.timed("metrics", || {
        let internal = internal_provider(&tokens, &cfg.options, &mut warnings).stage("metrics")?;
        let external = source.provider().stage("metrics")?;
        let top = all_top_words(&model, None, cfg.options.top_words).stage("metrics")?;
        evaluate(top, &tokens, internal.as_ref(), external.as_ref(), &cfg.options, &mut warnings).stage("metrics")
    })?;
    manifest.warnings.extend(warnings);
    manifest.timed("write", || write_json(&out.join("metrics.json"), &report).stage("write"))?;
    manifest.write(out).stage("write")?;
    Ok(EvalOutput { report, manifest })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepConfig {
    /// `n_keywords` is ignored in favour of `range`.
    pub fit: FitConfig,
    pub range: KeywordRange,
    pub options: EvalOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n_keywords: usize,
    pub diversity: f64,
    pub c_in: Option<f64>,
    pub c_ex: Option<f64>,
    pub c_npmi: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub manifest: RunManifest,
}

/// Fits and evaluates one model per keyword count. Embeddings and internal
/// word vectors are computed once. Writes `sweep.csv` and the manifest.
pub fn cmd_sweep(cfg: &SweepConfig, out: &Path) -> StageResult<SweepOutput> {
    cfg.fit.check()?;
    cfg.options.check()?;
    let _lock = OutputLock::acquire(out, "sweep")?;
    let mut manifest = RunManifest::new("sweep", cfg);
    if let Some(c) = manifest.config.get_mut("fit").and_then(|f| f.as_object_mut()) {
        c.remove("n_keywords");
    }
    cfg.fit.input.record_inputs(&mut manifest).stage("ingest")?;
    for (role, p) in cfg.fit.embeddings.files() {
        manifest.add_input(role, &p).stage("embed")?;
    }

    let prep = manifest.timed("ingest", || prepare_corpus(&cfg.fit.input).stage("ingest"))?;
    let provider = cfg.fit.embeddings.provider().stage("embed")?;
    let emb = manifest.timed("embed", || embed_corpus(&prep, provider.as_ref()).stage("embed"))?;
    let mut warnings = Vec::new();
    let internal = manifest.timed("internal-embeddings", || {
        internal_provider(&prep.tokens, &cfg.options, &mut warnings).stage("metrics")
    })?;

    let mut rows = Vec::new();
    for n in cfg.range.values() {
        let row = manifest.timed("fit+eval", || {
            let km = keyword_matrix(&prep, &emb, n).stage("keywords")?;
            let model = fit_nmf(&km, &cfg.fit.solver).stage("fit")?;
            let top = all_top_words(&model, None, cfg.options.top_words).stage("metrics")?;
            let mut local = Vec::new();
            let report = evaluate(
                top,
                &prep.tokens,
                internal.as_ref(),
                provider.as_ref(),
                &cfg.options,
                &mut local,
            )
            .stage("metrics")?;
            warnings.extend(local.into_iter().map(|w| format!("N = {n}: {w}")));
            Ok(SweepRow {
                n_keywords: n,
                diversity: report.diversity,
                c_in: report.c_in,
                c_ex: report.c_ex,
                c_npmi: report.c_npmi,
            })
        })?;
        rows.push(row);
    }
    manifest.warnings.extend(warnings);

    manifest.timed("write", || write_sweep_csv(&out.join("sweep.csv"), &rows).stage("write"))?;
    manifest.write(out).stage("write")?;
    Ok(SweepOutput { rows, manifest })
}

fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["n_keywords", "diversity", "c_in", "c_ex", "c_npmi"])
        .map_err(csv_err)?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.n_keywords.to_string(),
            r.diversity.to_string(),
            cell(r.c_in),
            cell(r.c_ex),
            cell(r.c_npmi),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
