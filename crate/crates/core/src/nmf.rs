//! Non-negative matrix factorization `M ≈ W H` under squared Frobenius loss,
//! solved by cyclic coordinate descent.
//!
//! Each outer iteration sweeps every entry of `H`, then every entry of `W`,
//! applying the exact single-coordinate minimizer projected onto `[0, ∞)`.
//! Internally `H` is stored transposed so both sweeps are row-parallel.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keywords::KeywordMatrix;
use crate::linalg::truncated_svd;
use crate::matrix::{read_ids, read_matrix, write_dense, write_ids, SparseMatrix};

/// Topic-count presets.
pub const K_PRESETS: [usize; 3] = [10, 25, 50];

const STALL_EPS: f64 = 1e-12;
const NNDSVD_ZERO: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// NNDSVD with zeros filled by the matrix mean (NNDSVDa).
    Nndsvd,
    SeededRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub k: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub init: Init,
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(k: usize) -> Self {
        SolverConfig {
            k,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("number of topics k must be at least 1"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid("rel_tol must be positive"));
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            k: 10,
            max_iter: 200,
            rel_tol: 1e-4,
            init: Init::Nndsvd,
            seed: 0,
        }
    }
}

/// Fitted factorization with its column vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    /// documents × k
    pub w: Array2<f64>,
    /// k × vocabulary
    pub h: Array2<f64>,
    pub vocabulary: Vec<String>,
    pub k: usize,
    pub final_loss: f64,
    pub iterations_run: usize,
    /// Loss after initialization followed by the loss after every outer iteration.
    pub loss_history: Vec<f64>,
    pub config: SolverConfig,
}

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    k: usize,
    config: SolverConfig,
    final_loss: f64,
    iterations_run: usize,
    loss_history: Vec<f64>,
}

impl TopicModel {
    /// Writes `W.knmf`, `H.knmf`, `vocab.txt` and `model.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_dense(dir.join("W.knmf"), self.w.view())?;
        write_dense(dir.join("H.knmf"), self.h.view())?;
        write_ids(dir.join("vocab.txt"), &self.vocabulary)?;
        let manifest = ModelManifest {
            k: self.k,
            config: self.config.clone(),
            final_loss: self.final_loss,
            iterations_run: self.iterations_run,
            loss_history: self.loss_history.clone(),
        };
        let path = dir.join("model.json");
        let json = serde_json::to_string_pretty(&manifest).expect("serializable");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("model.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: ModelManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let w = read_matrix(dir.join("W.knmf"))?.into_dense();
        let h = read_matrix(dir.join("H.knmf"))?.into_dense();
        let vocabulary = read_ids(dir.join("vocab.txt"))?;
        if w.ncols() != manifest.k || h.nrows() != manifest.k || h.ncols() != vocabulary.len() {
            return Err(Error::invalid(format!(
                "inconsistent model files in {}",
                dir.display()
            )));
        }
        Ok(TopicModel {
            w,
            h,
            vocabulary,
            k: manifest.k,
            final_loss: manifest.final_loss,
            iterations_run: manifest.iterations_run,
            loss_history: manifest.loss_history,
            config: manifest.config,
        })
    }

    pub fn reconstruction(&self) -> Array2<f64> {
        self.w.dot(&self.h)
    }
}

fn check_input(m: &SparseMatrix) -> Result<()> {
    if let Some((row, col)) = m.find_non_finite() {
        return Err(Error::NonFinite { row, col });
    }
    if m.min_value().is_some_and(|v| v < 0.0) {
        return Err(Error::invalid("matrix has negative entries"));
    }
    Ok(())
}

/// `|M - A Bᵀ|²` for `A` (rows × k) and `B` (cols × k), split into the
/// residual over stored entries plus the mass of `A Bᵀ` off the support.
pub fn frobenius_loss(m: &SparseMatrix, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let mut on_support = 0.0;
    let mut approx_on_support = 0.0;
    for r in 0..m.rows() {
        let ar = a.row(r);
        for (c, v) in m.row(r) {
            let approx = ar.dot(&b.row(c));
            on_support += (v - approx) * (v - approx);
            approx_on_support += approx * approx;
        }
    }
    let gram = a.t().dot(&a) * b.t().dot(&b);
    let approx_total = gram.sum();
    on_support + (approx_total - approx_on_support).max(0.0)
}

/// One cyclic sweep over every entry of `a`, minimizing `|X - a bᵀ|²` with
/// `gram = bᵀ b` and `xb = X b`.
fn sweep(a: &mut Array2<f64>, gram: &Array2<f64>, xb: &Array2<f64>) {
    let k = gram.nrows();
    Zip::from(a.rows_mut())
        .and(xb.rows())
        .par_for_each(|mut row, target| {
            for t in 0..k {
                let hess = gram[[t, t]];
                if hess <= 0.0 {
                    continue;
                }
                let grad = row.dot(&gram.column(t)) - target[t];
                let next = row[t] - grad / hess;
                row[t] = if next > 0.0 { next } else { 0.0 };
            }
        });
}

fn converged(prev: f64, cur: f64, first: f64, tol: f64) -> bool {
    (prev - cur) / first.max(STALL_EPS) < tol
}

fn nndsvd(m: &SparseMatrix, k: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let (rows, cols) = m.shape();
    let mut w = Array2::zeros((rows, k));
    let mut ht = Array2::zeros((cols, k));
    let svd = truncated_svd(m, k, seed);
    for j in 0..svd.s.len() {
        let s = svd.s[j];
        if s <= 0.0 {
            continue;
        }
        let x = svd.u.column(j);
        let y = svd.vt.row(j);
        if j == 0 {
            w.column_mut(0).assign(&x.mapv(|v| s.sqrt() * v.abs()));
            ht.column_mut(0).assign(&y.mapv(|v| s.sqrt() * v.abs()));
            continue;
        }
        let pos = |v: f64| v.max(0.0);
        let neg = |v: f64| (-v).max(0.0);
        let (xp, xn) = (x.mapv(pos), x.mapv(neg));
        let (yp, yn) = (y.mapv(pos), y.mapv(neg));
        let norm = |v: &Array1<f64>| v.dot(v).sqrt();
        let (nxp, nxn, nyp, nyn) = (norm(&xp), norm(&xn), norm(&yp), norm(&yn));
        let (mp, mn) = (nxp * nyp, nxn * nyn);
        let (u, v, sigma) = if mp > mn {
            (xp / nxp, yp / nyp, mp)
        } else if mn > 0.0 {
            (xn / nxn, yn / nyn, mn)
        } else {
            continue;
        };
        let scale = (s * sigma).sqrt();
        w.column_mut(j).assign(&(u * scale));
        ht.column_mut(j).assign(&(v * scale));
    }
    let total = (rows * cols) as f64;
    let mean = if total > 0.0 {
        m.values().iter().sum::<f64>() / total
    } else {
        0.0
    };
    for x in w.iter_mut().chain(ht.iter_mut()) {
        if *x < NNDSVD_ZERO {
            *x = mean;
        }
    }
    (w, ht)
}

fn random_init(m: &SparseMatrix, k: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let (rows, cols) = m.shape();
    let total = (rows * cols).max(1) as f64;
    let mean = m.values().iter().sum::<f64>() / total;
    let scale = (mean / k as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || {
        let z: f64 = StandardNormal.sample(&mut rng);
        scale * z.abs()
    };
    let w = Array2::from_shape_simple_fn((rows, k), &mut draw);
    let ht = Array2::from_shape_simple_fn((cols, k), &mut draw);
    (w, ht)
}

/// Factorizes the raw matrix. Returned `H` rows have unit L2 norm with the
/// scale folded into the matching `W` columns.
pub fn fit_factors(m: &SparseMatrix, cfg: &SolverConfig) -> Result<FitResult> {
    cfg.validate()?;
    check_input(m)?;
    let k = cfg.k;
    let (mut w, mut ht) = match cfg.init {
        Init::Nndsvd => nndsvd(m, k, cfg.seed),
        Init::SeededRandom => random_init(m, k, cfg.seed),
    };
    let mut losses = vec![frobenius_loss(m, w.view(), ht.view())];
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let (w_prev, ht_prev) = (w.clone(), ht.clone());
        let gram_w = w.t().dot(&w);
        let mtw = m.t_dot_dense(w.view());
        sweep(&mut ht, &gram_w, &mtw);

        let gram_h = ht.t().dot(&ht);
        let mh = m.dot_dense(ht.view());
        sweep(&mut w, &gram_h, &mh);

        let cur = frobenius_loss(m, w.view(), ht.view());
        let prev = *losses.last().expect("initial loss");
        if cur > prev {
            // rounding-level ascent at convergence: keep the better iterate
            (w, ht) = (w_prev, ht_prev);
            break;
        }
        iterations += 1;
        losses.push(cur);
        if converged(prev, cur, losses[0], cfg.rel_tol) {
            break;
        }
    }
    normalize_topics(&mut w, &mut ht);
    Ok(FitResult {
        w,
        h: ht.reversed_axes(),
        final_loss: *losses.last().expect("initial loss"),
        iterations,
        loss_history: losses,
    })
}

/// Raw solver output.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
    pub final_loss: f64,
    pub iterations: usize,
    pub loss_history: Vec<f64>,
}

fn normalize_topics(w: &mut Array2<f64>, ht: &mut Array2<f64>) {
    for t in 0..ht.ncols() {
        let norm = ht.column(t).dot(&ht.column(t)).sqrt();
        if norm > 0.0 {
            ht.column_mut(t).mapv_inplace(|v| v / norm);
            w.column_mut(t).mapv_inplace(|v| v * norm);
        }
    }
}

/// Fits `M ≈ W H` to a keyword (or term-count) matrix.
pub fn fit_nmf(m: &KeywordMatrix, cfg: &SolverConfig) -> Result<TopicModel> {
    let fit = fit_factors(&m.matrix, cfg)?;
    Ok(TopicModel {
        w: fit.w,
        h: fit.h,
        vocabulary: m.vocabulary.clone(),
        k: cfg.k,
        final_loss: fit.final_loss,
        iterations_run: fit.iterations,
        loss_history: fit.loss_history,
        config: cfg.clone(),
    })
}

/// Result of a one-sided solve.
#[derive(Debug, Clone)]
pub struct FixedSolve {
    pub factor: Array2<f64>,
    pub loss_history: Vec<f64>,
    pub iterations: usize,
}

/// Minimizes `|X - A Bᵀ|²` over `A ≥ 0` with `B` held fixed, where `xb = X B`.
fn solve_one_side(
    x: &SparseMatrix,
    b: ArrayView2<'_, f64>,
    xb: &Array2<f64>,
    mut a: Array2<f64>,
    x_is_transposed: bool,
    cfg: &SolverConfig,
) -> (Array2<f64>, Vec<f64>, usize) {
    let gram = b.t().dot(&b);
    let loss = |a: &Array2<f64>| {
        if x_is_transposed {
            frobenius_loss(x, b, a.view())
        } else {
            frobenius_loss(x, a.view(), b)
        }
    };
    let mut losses = vec![loss(&a)];
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let prev_a = a.clone();
        sweep(&mut a, &gram, xb);
        let cur = loss(&a);
        let prev = *losses.last().expect("initial loss");
        if cur > prev {
            a = prev_a;
            break;
        }
        iterations += 1;
        losses.push(cur);
        if converged(prev, cur, losses[0], cfg.rel_tol) {
            break;
        }
    }
    (a, losses, iterations)
}

/// `H_t = argmin_{H ≥ 0} |M_t - W_t H|²` with `W_t` fixed.
///
/// `init` (k × cols) warm-starts the solve; zeros otherwise. Topics whose
/// `W_t` column is all zero get an all-zero row.
pub fn solve_h_fixed_w(
    m: &SparseMatrix,
    w: ArrayView2<'_, f64>,
    cfg: &SolverConfig,
    init: Option<ArrayView2<'_, f64>>,
) -> Result<FixedSolve> {
    check_input(m)?;
    if w.nrows() != m.rows() {
        return Err(Error::DimensionMismatch {
            expected: m.rows(),
            got: w.nrows(),
        });
    }
    if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid("W must be finite and non-negative"));
    }
    let k = w.ncols();
    let mut ht = match init {
        Some(h0) => {
            if h0.dim() != (k, m.cols()) {
                return Err(Error::DimensionMismatch {
                    expected: k * m.cols(),
                    got: h0.len(),
                });
            }
            h0.t().mapv(|v| v.max(0.0))
        }
        None => Array2::zeros((m.cols(), k)),
    };
    for (t, col) in w.axis_iter(Axis(1)).enumerate() {
        if col.iter().all(|&v| v == 0.0) {
            ht.column_mut(t).fill(0.0);
        }
    }
    let mtw = m.t_dot_dense(w);
    let (ht, losses, iterations) = solve_one_side(m, w, &mtw, ht, true, cfg);
    Ok(FixedSolve {
        factor: ht.reversed_axes(),
        loss_history: losses,
        iterations,
    })
}

/// Projects new documents onto a fitted model's topics: `W_new ≥ 0`
/// minimizing `|M - W_new H|²`. Keywords outside the model vocabulary are
/// dropped.
pub fn transform(docs: &KeywordMatrix, model: &TopicModel, cfg: &SolverConfig) -> Result<Array2<f64>> {
    let (aligned, shared) = docs.align_to(&model.vocabulary);
    if shared == 0 {
        return Err(Error::invalid(
            "documents share no vocabulary with the model",
        ));
    }
    transform_aligned(&aligned.matrix, model.h.view(), cfg).map(|s| s.factor)
}

/// `transform` for a matrix already expressed over the model's columns.
pub fn transform_aligned(m: &SparseMatrix, h: ArrayView2<'_, f64>, cfg: &SolverConfig) -> Result<FixedSolve> {
    check_input(m)?;
    if h.ncols() != m.cols() {
        return Err(Error::DimensionMismatch {
            expected: m.cols(),
            got: h.ncols(),
        });
    }
    let ht = h.t();
    let mh = m.dot_dense(ht);
    let w0 = Array2::zeros((m.rows(), h.nrows()));
    let (w, losses, iterations) = solve_one_side(m, ht, &mh, w0, false, cfg);
    Ok(FixedSolve {
        factor: w,
        loss_history: losses,
        iterations,
    })
}
