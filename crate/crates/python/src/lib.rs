//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::{PyConnectionError, PyOSError, PyValueError};
use pyo3::prelude::*;

use keynmf::corpus::{tokenize_text, Lexicon, Segmenter, Stopwords};
use keynmf::dynamic::{all_top_words, fit_dynamic, topic_top_words, SliceRows};
use keynmf::embed::{EmbeddingProvider, HashEmbedder};
use keynmf::keywords::{build_keyword_matrix, keyword_sets_for_corpus, KeywordMatrix, DEFAULT_N_KEYWORDS};
use keynmf::matrix::SparseMatrix;
use keynmf::metrics::{self, TopicDescriptions};
use keynmf::nmf::{self, Init, SolverConfig};
use keynmf::pipeline::EmbeddingSource;
use keynmf::{infodyn, Error};

create_exception!(keynmf_py, KeynmfError, PyValueError);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Transport { .. } => PyConnectionError::new_err(e.to_string()),
        _ => KeynmfError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for keynmf::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn to_array(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(KeynmfError::new_err("matrix rows must all have the same length"));
    }
    Array2::from_shape_vec((rows.len(), cols), rows.concat()).map_err(|e| KeynmfError::new_err(e.to_string()))
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn solver(k: usize, init: &str, max_iter: usize, rel_tol: f64, seed: u64) -> PyResult<SolverConfig> {
    let init = match init {
        "nndsvd" => Init::Nndsvd,
        "random" => Init::SeededRandom,
        other => return Err(KeynmfError::new_err(format!("unknown init `{other}`, expected nndsvd or random"))),
    };
    Ok(SolverConfig {
        k,
        max_iter,
        rel_tol,
        init,
        seed,
    })
}

fn segmenter(lexicon: Option<Vec<String>>) -> Segmenter {
    match lexicon {
        Some(words) => Segmenter::Dictionary(Lexicon::new(words)),
        None => Segmenter::Unicode,
    }
}

fn parse_source(spec: &str) -> PyResult<EmbeddingSource> {
    if spec == "test" {
        return Ok(EmbeddingSource::Test(0));
    }
    spec.parse().py()
}

fn descriptions(topics: Vec<Vec<String>>) -> PyResult<TopicDescriptions> {
    TopicDescriptions::new(topics).py()
}

/// Lowercased content tokens of `text` with stopwords removed.
#[pyfunction]
#[pyo3(signature = (text, stopwords=None, lexicon=None))]
fn tokenize(text: &str, stopwords: Option<Vec<String>>, lexicon: Option<Vec<String>>) -> PyResult<Vec<String>> {
    let stop = Stopwords::new(stopwords.unwrap_or_default());
    Ok(tokenize_text("", text, &segmenter(lexicon), &stop).py()?.tokens)
}

/// Embedding backend: `test:SEED`, `precomputed:PATH` or `http:URL`.
#[pyclass(module = "keynmf_py", frozen)]
struct Embedder {
    spec: String,
    inner: Box<dyn EmbeddingProvider>,
}

#[pymethods]
impl Embedder {
    #[new]
    #[pyo3(signature = (source="test:0"))]
    fn new(source: &str) -> PyResult<Self> {
        let src = parse_source(source)?;
        Ok(Embedder {
            spec: src.to_string(),
            inner: src.provider().py()?,
        })
    }

    /// Deterministic hashed embedder with an explicit dimension.
    #[staticmethod]
    #[pyo3(signature = (seed=0, dim=HashEmbedder::DEFAULT_DIM))]
    fn hashed(seed: u64, dim: usize) -> PyResult<Self> {
        if dim == 0 {
            return Err(KeynmfError::new_err("dim must be positive"));
        }
        Ok(Embedder {
            spec: format!("test:{seed}"),
            inner: Box::new(HashEmbedder::new(seed, dim)),
        })
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id()
    }

    #[getter]
    fn dimension(&self) -> Option<usize> {
        self.inner.dimension()
    }

    fn embed(&self, py: Python<'_>, texts: Vec<String>) -> PyResult<Vec<Vec<f64>>> {
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let vecs = py.detach(|| self.inner.embed(&refs)).py()?;
        Ok(vecs.into_iter().map(|v| v.into_inner()).collect())
    }

    fn __repr__(&self) -> String {
        format!("Embedder('{}')", self.spec)
    }
}

fn keyword_matrix(
    py: Python<'_>,
    docs: &[String],
    embedder: &Embedder,
    n_keywords: usize,
    stopwords: Option<Vec<String>>,
) -> PyResult<KeywordMatrix> {
    let seg = Segmenter::Unicode;
    let stop = Stopwords::new(stopwords.unwrap_or_default());
    let tokenized = docs
        .iter()
        .enumerate()
        .map(|(i, d)| tokenize_text(&i.to_string(), d, &seg, &stop))
        .collect::<keynmf::Result<Vec<_>>>()
        .py()?;
    let texts: Vec<&str> = docs.iter().map(String::as_str).collect();
    py.detach(|| {
        let sets = keyword_sets_for_corpus(&tokenized, &texts, embedder.inner.as_ref(), n_keywords)?;
        build_keyword_matrix(&sets)
    })
    .py()
}

/// Non-negative factorization `M ≈ W H` with named vocabulary columns.
#[pyclass(module = "keynmf_py", frozen)]
struct TopicModel {
    inner: nmf::TopicModel,
}

#[pymethods]
impl TopicModel {
    /// Extracts keywords from each text and factorizes the keyword matrix.
    #[staticmethod]
    #[pyo3(signature = (docs, k=10, n_keywords=DEFAULT_N_KEYWORDS, embedder=None, stopwords=None,
                        init="nndsvd", max_iter=200, rel_tol=1e-4, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        py: Python<'_>,
        docs: Vec<String>,
        k: usize,
        n_keywords: usize,
        embedder: Option<&Embedder>,
        stopwords: Option<Vec<String>>,
        init: &str,
        max_iter: usize,
        rel_tol: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = solver(k, init, max_iter, rel_tol, seed)?;
        let fallback;
        let embedder = match embedder {
            Some(e) => e,
            None => {
                fallback = Embedder::new("test:0")?;
                &fallback
            }
        };
        let m = keyword_matrix(py, &docs, embedder, n_keywords, stopwords)?;
        let inner = py.detach(|| nmf::fit_nmf(&m, &cfg)).py()?;
        Ok(TopicModel { inner })
    }

    /// Factorizes a dense non-negative matrix given as rows.
    #[staticmethod]
    #[pyo3(signature = (matrix, k, vocabulary=None, init="nndsvd", max_iter=200, rel_tol=1e-4, seed=0))]
    fn from_matrix(
        py: Python<'_>,
        matrix: Vec<Vec<f64>>,
        k: usize,
        vocabulary: Option<Vec<String>>,
        init: &str,
        max_iter: usize,
        rel_tol: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = solver(k, init, max_iter, rel_tol, seed)?;
        let dense = to_array(&matrix)?;
        let vocabulary = vocabulary.unwrap_or_else(|| (0..dense.ncols()).map(|j| format!("w{j}")).collect());
        let ids = (0..dense.nrows()).map(|i| i.to_string()).collect();
        let m = KeywordMatrix::new(vocabulary, ids, SparseMatrix::from_dense(dense.view())).py()?;
        let inner = py.detach(|| nmf::fit_nmf(&m, &cfg)).py()?;
        Ok(TopicModel { inner })
    }

    /// Reads a model directory written by `save` or the `fit` command.
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(TopicModel {
            inner: nmf::TopicModel::load(dir).py()?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(dir).py()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn vocabulary(&self) -> Vec<String> {
        self.inner.vocabulary.clone()
    }

    #[getter]
    fn w(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.w)
    }

    #[getter]
    fn h(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.h)
    }

    #[getter]
    fn loss_history(&self) -> Vec<f64> {
        self.inner.loss_history.clone()
    }

    #[getter]
    fn final_loss(&self) -> f64 {
        self.inner.final_loss
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations_run
    }

    #[pyo3(signature = (topic, top_k=10))]
    fn top_words(&self, topic: usize, top_k: usize) -> PyResult<Vec<(String, f64)>> {
        topic_top_words(&self.inner, topic, None, top_k).py()
    }

    /// Top words of every topic.
    #[pyo3(signature = (top_k=10))]
    fn topics(&self, top_k: usize) -> PyResult<Vec<Vec<String>>> {
        all_top_words(&self.inner, None, top_k).py()
    }

    fn __repr__(&self) -> String {
        format!(
            "TopicModel(k={}, vocabulary={}, documents={})",
            self.inner.k,
            self.inner.vocabulary.len(),
            self.inner.w.nrows()
        )
    }
}

/// Per-slice topic-term matrices and topic pseudo-distributions.
#[pyclass(module = "keynmf_py", frozen)]
struct DynamicModel {
    inner: keynmf::dynamic::DynamicModel,
}

#[pymethods]
impl DynamicModel {
    /// `slices[i]` is the time-slice index of `docs[i]`.
    #[staticmethod]
    #[pyo3(signature = (docs, slices, k=10, n_keywords=DEFAULT_N_KEYWORDS, embedder=None, stopwords=None,
                        init="nndsvd", max_iter=200, rel_tol=1e-4, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        py: Python<'_>,
        docs: Vec<String>,
        slices: Vec<u64>,
        k: usize,
        n_keywords: usize,
        embedder: Option<&Embedder>,
        stopwords: Option<Vec<String>>,
        init: &str,
        max_iter: usize,
        rel_tol: f64,
        seed: u64,
    ) -> PyResult<Self> {
        if slices.len() != docs.len() {
            return Err(KeynmfError::new_err(format!(
                "{} slice labels for {} documents",
                slices.len(),
                docs.len()
            )));
        }
        let cfg = solver(k, init, max_iter, rel_tol, seed)?;
        let fallback;
        let embedder = match embedder {
            Some(e) => e,
            None => {
                fallback = Embedder::new("test:0")?;
                &fallback
            }
        };
        let m = keyword_matrix(py, &docs, embedder, n_keywords, stopwords)?;
        let mut grouped = std::collections::BTreeMap::<u64, Vec<usize>>::new();
        for (row, &s) in slices.iter().enumerate() {
            grouped.entry(s).or_default().push(row);
        }
        let rows: Vec<SliceRows> = grouped.into_iter().map(|(index, rows)| SliceRows { index, rows }).collect();
        let inner = py.detach(|| fit_dynamic(&m, &rows, &cfg)).py()?;
        Ok(DynamicModel { inner })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn slices(&self) -> Vec<u64> {
        self.inner.slices.clone()
    }

    #[getter]
    fn p_hat(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.p_hat)
    }

    #[getter]
    fn importance(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.importance)
    }

    #[getter]
    fn degenerate(&self) -> Vec<bool> {
        self.inner.degenerate.clone()
    }

    #[getter]
    fn base(&self) -> TopicModel {
        TopicModel {
            inner: self.inner.base.clone(),
        }
    }

    /// Top words of `topic` in the slice at position `slice`.
    #[pyo3(signature = (topic, slice, top_k=10))]
    fn top_words(&self, topic: usize, slice: usize, top_k: usize) -> PyResult<Vec<(String, f64)>> {
        topic_top_words(&self.inner, topic, Some(slice), top_k).py()
    }

    fn __repr__(&self) -> String {
        format!("DynamicModel(k={}, slices={})", self.inner.k(), self.inner.n_slices())
    }
}

/// Jensen-Shannon divergence in bits.
#[pyfunction]
fn jsd(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    infodyn::jsd(&p, &q).py()
}

#[pyfunction]
fn novelty(series: Vec<Vec<f64>>, t: usize, window: usize) -> PyResult<f64> {
    infodyn::novelty(&series, t, window).py()
}

#[pyfunction]
fn transience(series: Vec<Vec<f64>>, t: usize, window: usize) -> PyResult<f64> {
    infodyn::transience(&series, t, window).py()
}

/// Novelty, transience and resonance for every row of `p_hat`, as a dict of
/// lists with `None` where a signal is undefined. With `span`, smoothed
/// novelty and resonance are included.
#[pyfunction]
#[pyo3(signature = (p_hat, window, span=None, degree=infodyn::DEFAULT_DEGREE))]
fn resonance_series<'py>(
    py: Python<'py>,
    p_hat: Vec<Vec<f64>>,
    window: usize,
    span: Option<usize>,
    degree: usize,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let p = to_array(&p_hat)?;
    let mut s = infodyn::resonance_series(p.view(), window).py()?;
    let skipped = match span {
        Some(span) => s.smooth(span, degree).py()?,
        None => Vec::new(),
    };
    let out = pyo3::types::PyDict::new(py);
    out.set_item("novelty", s.novelty)?;
    out.set_item("transience", s.transience)?;
    out.set_item("resonance", s.resonance)?;
    if span.is_some() {
        out.set_item("novelty_smooth", s.novelty_smooth)?;
        out.set_item("resonance_smooth", s.resonance_smooth)?;
        out.set_item("unsmoothed", skipped)?;
    }
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (signal, span=infodyn::DEFAULT_SPAN, degree=infodyn::DEFAULT_DEGREE))]
fn adaptive_filter(signal: Vec<f64>, span: usize, degree: usize) -> PyResult<Vec<f64>> {
    infodyn::adaptive_filter(&signal, span, degree).py()
}

/// Share of distinct words among all topic words.
#[pyfunction]
fn diversity(topics: Vec<Vec<String>>) -> PyResult<f64> {
    Ok(metrics::diversity(&descriptions(topics)?))
}

#[pyfunction]
#[pyo3(signature = (topics, embedder=None))]
fn embedding_coherence(py: Python<'_>, topics: Vec<Vec<String>>, embedder: Option<&Embedder>) -> PyResult<f64> {
    let desc = descriptions(topics)?;
    match embedder {
        Some(e) => py.detach(|| metrics::embedding_coherence(&desc, e.inner.as_ref())).py(),
        None => metrics::embedding_coherence(&desc, &HashEmbedder::new(0, HashEmbedder::DEFAULT_DIM)).py(),
    }
}

/// Mean pairwise NPMI of topic words over sliding windows of the tokenized
/// reference documents.
#[pyfunction]
#[pyo3(signature = (topics, reference, window=metrics::DEFAULT_NPMI_WINDOW))]
fn npmi_coherence(topics: Vec<Vec<String>>, reference: Vec<Vec<String>>, window: usize) -> PyResult<f64> {
    let desc = descriptions(topics)?;
    let docs: Vec<_> = reference
        .into_iter()
        .enumerate()
        .map(|(i, tokens)| keynmf::corpus::TokenizedDocument {
            doc_id: i.to_string(),
            tokens,
        })
        .collect();
    metrics::npmi_coherence(&desc, &docs, window).py()
}

#[pymodule]
fn keynmf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("KeynmfError", m.py().get_type::<KeynmfError>())?;
    m.add_class::<Embedder>()?;
    m.add_class::<TopicModel>()?;
    m.add_class::<DynamicModel>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(jsd, m)?)?;
    m.add_function(wrap_pyfunction!(novelty, m)?)?;
    m.add_function(wrap_pyfunction!(transience, m)?)?;
    m.add_function(wrap_pyfunction!(resonance_series, m)?)?;
    m.add_function(wrap_pyfunction!(adaptive_filter, m)?)?;
    m.add_function(wrap_pyfunction!(diversity, m)?)?;
    m.add_function(wrap_pyfunction!(embedding_coherence, m)?)?;
    m.add_function(wrap_pyfunction!(npmi_coherence, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
