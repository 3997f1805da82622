//! Time-sliced topic model: one global factorization, then per-slice
//! topic-term matrices re-estimated with the global document weights fixed.
//!
//! For slice `t` with document rows `D_t`:
//!
//! * `H_t = argmin_{H ≥ 0} |M[D_t] - W[D_t] H|²`
//! * `I_tj = Σ_{d ∈ D_t} W[d, j]` (temporal importance)
//! * `P̂_t = I_t / Σ_j I_tj` (pseudo-distribution over topics)
//!
//! Slices whose importances sum to zero (empty, or only documents with no
//! topic mass) get the uniform distribution and are flagged as degenerate.

use std::io::Write;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::keywords::{by_score_then_word, KeywordMatrix};
use crate::matrix::write_dense;
use crate::nmf::{fit_nmf, solve_h_fixed_w, SolverConfig, TopicModel};

/// Rows of the keyword matrix belonging to one time slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceRows {
    pub index: u64,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DynamicModel {
    pub base: TopicModel,
    /// Slice indices, ascending.
    pub slices: Vec<u64>,
    /// Per-slice topic-term matrices (k × vocabulary).
    pub h_t: Vec<Array2<f64>>,
    /// Temporal importances, slices × k.
    pub importance: Array2<f64>,
    /// Pseudo-distributions, slices × k.
    pub p_hat: Array2<f64>,
    /// Slices whose pseudo-distribution fell back to uniform.
    pub degenerate: Vec<bool>,
    pub doc_counts: Vec<usize>,
}

fn check_cover(n_rows: usize, slices: &[SliceRows]) -> Result<()> {
    let mut seen = vec![false; n_rows];
    for s in slices {
        for &r in &s.rows {
            if r >= n_rows {
                return Err(Error::invalid(format!(
                    "slice {} references row {r}, but the matrix has {n_rows} rows",
                    s.index
                )));
            }
            if std::mem::replace(&mut seen[r], true) {
                return Err(Error::invalid(format!("row {r} assigned to more than one slice")));
            }
        }
    }
    if let Some(r) = seen.iter().position(|&s| !s) {
        return Err(Error::invalid(format!("row {r} is not assigned to any slice")));
    }
    if slices.windows(2).any(|w| w[0].index >= w[1].index) {
        return Err(Error::invalid("slices must be in strictly ascending index order"));
    }
    Ok(())
}

/// Column sums of the selected rows of `w`.
pub fn temporal_importance(w: ArrayView2<'_, f64>, rows: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; w.ncols()];
    for &r in rows {
        for (acc, v) in out.iter_mut().zip(w.row(r)) {
            *acc += v;
        }
    }
    out
}

/// L1 normalization; `None` when the total is zero.
pub fn pseudo_distribution(importance: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = importance.iter().sum();
    (total > 0.0).then(|| importance.iter().map(|v| v / total).collect())
}

impl DynamicModel {
    /// Per-slice solves against an already fitted global model.
    pub fn from_base(
        base: TopicModel,
        m: &KeywordMatrix,
        slices: &[SliceRows],
        cfg: &SolverConfig,
    ) -> Result<Self> {
        if m.n_docs() != base.w.nrows() || m.vocabulary != base.vocabulary {
            return Err(Error::invalid("keyword matrix does not match the base model"));
        }
        check_cover(m.n_docs(), slices)?;
        let k = base.k;
        let h_t = slices
            .par_iter()
            .map(|s| {
                let m_t = m.matrix.select_rows(&s.rows);
                let w_t = base.w.select(Axis(0), &s.rows);
                solve_h_fixed_w(&m_t, w_t.view(), cfg, Some(base.h.view())).map(|r| r.factor)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut importance = Array2::zeros((slices.len(), k));
        let mut p_hat = Array2::zeros((slices.len(), k));
        let mut degenerate = Vec::with_capacity(slices.len());
        for (i, s) in slices.iter().enumerate() {
            let imp = temporal_importance(base.w.view(), &s.rows);
            importance.row_mut(i).assign(&ArrayView1::from(&imp));
            match pseudo_distribution(&imp) {
                Some(p) => {
                    p_hat.row_mut(i).assign(&ArrayView1::from(&p));
                    degenerate.push(false);
                }
                None => {
                    p_hat.row_mut(i).fill(1.0 / k as f64);
                    degenerate.push(true);
                }
            }
        }
        Ok(DynamicModel {
            base,
            slices: slices.iter().map(|s| s.index).collect(),
            h_t,
            importance,
            p_hat,
            degenerate,
            doc_counts: slices.iter().map(|s| s.rows.len()).collect(),
        })
    }

    pub fn k(&self) -> usize {
        self.base.k
    }

    pub fn n_slices(&self) -> usize {
        self.slices.len()
    }

    /// Writes `P_hat.knmf`, `I.knmf` and one `H_t/slice_<index>.knmf` per slice.
    pub fn save_matrices(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_dense(dir.join("P_hat.knmf"), self.p_hat.view())?;
        write_dense(dir.join("I.knmf"), self.importance.view())?;
        let ht_dir = dir.join("H_t");
        std::fs::create_dir_all(&ht_dir).map_err(|e| Error::io(&ht_dir, e))?;
        for (idx, h) in self.slices.iter().zip(&self.h_t) {
            write_dense(ht_dir.join(format!("slice_{idx:06}.knmf")), h.view())?;
        }
        Ok(())
    }

    /// CSV with columns `slice_start_iso, topic_0 .. topic_{k-1}`.
    pub fn write_p_hat_csv(&self, path: impl AsRef<Path>, starts: &[DateTime<Utc>]) -> Result<()> {
        let path = path.as_ref();
        if starts.len() != self.n_slices() {
            return Err(Error::DimensionMismatch {
                expected: self.n_slices(),
                got: starts.len(),
            });
        }
        let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["slice_start_iso".to_string()];
        header.extend((0..self.k()).map(|j| format!("topic_{j}")));
        w.write_record(&header).map_err(csv_err)?;
        for (start, row) in starts.iter().zip(self.p_hat.rows()) {
            let mut rec = vec![start.to_rfc3339_opts(SecondsFormat::Secs, true)];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// JSONL of `{slice, topic, words, weights}` for every slice and topic.
    pub fn write_top_words_jsonl(&self, path: impl AsRef<Path>, top_k: usize) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            slice: u64,
            topic: usize,
            words: Vec<&'a str>,
            weights: Vec<f64>,
        }
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        for (pos, &slice) in self.slices.iter().enumerate() {
            for topic in 0..self.k() {
                let top = top_words_in_row(self.h_t[pos].row(topic), &self.base.vocabulary, top_k);
                let line = Line {
                    slice,
                    topic,
                    words: top.iter().map(|(w, _)| w.as_str()).collect(),
                    weights: top.iter().map(|(_, v)| *v).collect(),
                };
                serde_json::to_writer(&mut out, &line).expect("serializable");
                out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Anything exposing topic-term weights over a vocabulary.
pub trait TopicTerms {
    fn vocabulary(&self) -> &[String];
    fn k(&self) -> usize;
    /// The topic-term matrix, for a slice position when the model is dynamic.
    fn topic_terms(&self, slice: Option<usize>) -> Result<ArrayView2<'_, f64>>;
}

impl TopicTerms for TopicModel {
    fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    fn k(&self) -> usize {
        self.k
    }

    fn topic_terms(&self, slice: Option<usize>) -> Result<ArrayView2<'_, f64>> {
        match slice {
            None => Ok(self.h.view()),
            Some(_) => Err(Error::invalid("a static topic model has no time slices")),
        }
    }
}

impl TopicTerms for DynamicModel {
    fn vocabulary(&self) -> &[String] {
        &self.base.vocabulary
    }

    fn k(&self) -> usize {
        self.base.k
    }

    fn topic_terms(&self, slice: Option<usize>) -> Result<ArrayView2<'_, f64>> {
        match slice {
            None => Ok(self.base.h.view()),
            Some(s) => self
                .h_t
                .get(s)
                .map(|h| h.view())
                .ok_or_else(|| Error::invalid(format!("slice position {s} out of range"))),
        }
    }
}

fn top_words_in_row(row: ArrayView1<'_, f64>, vocabulary: &[String], top_k: usize) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> = vocabulary.iter().cloned().zip(row.iter().copied()).collect();
    scored.sort_by(by_score_then_word);
    scored.truncate(top_k);
    scored
}

/// The `top_k` heaviest words of a topic, ties broken lexicographically.
pub fn topic_top_words<M: TopicTerms + ?Sized>(
    model: &M,
    topic: usize,
    slice: Option<usize>,
    top_k: usize,
) -> Result<Vec<(String, f64)>> {
    if topic >= model.k() {
        return Err(Error::invalid(format!("topic {topic} out of range (k = {})", model.k())));
    }
    if top_k == 0 {
        return Err(Error::invalid("top_k must be at least 1"));
    }
    let h = model.topic_terms(slice)?;
    Ok(top_words_in_row(h.row(topic), model.vocabulary(), top_k))
}

/// Top words of every topic of a model.
pub fn all_top_words<M: TopicTerms + ?Sized>(model: &M, slice: Option<usize>, top_k: usize) -> Result<Vec<Vec<String>>> {
    (0..model.k())
        .map(|t| topic_top_words(model, t, slice, top_k).map(|ws| ws.into_iter().map(|(w, _)| w).collect()))
        .collect()
}

/// Global fit followed by per-slice re-estimation.
pub fn fit_dynamic(m: &KeywordMatrix, slices: &[SliceRows], cfg: &SolverConfig) -> Result<DynamicModel> {
    check_cover(m.n_docs(), slices)?;
    let base = fit_nmf(m, cfg)?;
    DynamicModel::from_base(base, m, slices, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::SparseMatrix;
    use ndarray::array;

    fn base_model(w: Array2<f64>, h: Array2<f64>, vocab: &[&str]) -> TopicModel {
        TopicModel {
            k: w.ncols(),
            w,
            h,
            vocabulary: vocab.iter().map(|s| s.to_string()).collect(),
            final_loss: 0.0,
            iterations_run: 0,
            loss_history: vec![],
            config: SolverConfig::new(2),
        }
    }

    fn km(d: Array2<f64>, vocab: &[&str]) -> KeywordMatrix {
        let n = d.nrows();
        KeywordMatrix::new(
            vocab.iter().map(|s| s.to_string()).collect(),
            (0..n).map(|i| format!("d{i}")).collect(),
            SparseMatrix::from_dense(d.view()),
        )
        .unwrap()
    }

    #[test]
    fn single_document_slice() {
        let base = base_model(array![[0.2, 0.8]], array![[1.0, 0.0], [0.0, 1.0]], &["a", "b"]);
        let m = km(array![[0.2, 0.8]], &["a", "b"]);
        let dm = DynamicModel::from_base(base, &m, &[SliceRows { index: 0, rows: vec![0] }], &SolverConfig::new(2)).unwrap();
        assert_eq!(dm.p_hat.row(0).to_vec(), vec![0.2, 0.8]);
    }

    #[test]
    fn one_slice_matches_global_mass() {
        let m = km(array![[1.0, 0.0, 0.5], [0.0, 1.0, 0.2], [0.8, 0.1, 0.0]], &["a", "b", "c"]);
        let cfg = SolverConfig::new(2);
        let dm = fit_dynamic(&m, &[SliceRows { index: 0, rows: vec![0, 1, 2] }], &cfg).unwrap();
        let sums = dm.base.w.sum_axis(Axis(0));
        for j in 0..2 {
            assert_eq!(dm.importance[[0, j]], sums[j]);
            assert!((dm.p_hat[[0, j]] - sums[j] / sums.sum()).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_slice_is_uniform_and_flagged() {
        let m = km(array![[1.0, 0.0], [0.0, 1.0]], &["a", "b"]);
        let slices = [
            SliceRows { index: 0, rows: vec![0] },
            SliceRows { index: 1, rows: vec![] },
            SliceRows { index: 2, rows: vec![1] },
        ];
        let dm = fit_dynamic(&m, &slices, &SolverConfig::new(2)).unwrap();
        assert_eq!(dm.degenerate, vec![false, true, false]);
        assert_eq!(dm.p_hat.row(1).to_vec(), vec![0.5, 0.5]);
        assert!(dm.h_t[1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_slice_maps() {
        let m = km(array![[1.0], [1.0]], &["a"]);
        let cfg = SolverConfig::new(1);
        let unknown = [SliceRows { index: 0, rows: vec![0, 1, 5] }];
        assert!(fit_dynamic(&m, &unknown, &cfg).is_err());
        let missing = [SliceRows { index: 0, rows: vec![0] }];
        assert!(fit_dynamic(&m, &missing, &cfg).is_err());
        let twice = [SliceRows { index: 0, rows: vec![0, 1] }, SliceRows { index: 1, rows: vec![1] }];
        assert!(fit_dynamic(&m, &twice, &cfg).is_err());
    }

    #[test]
    fn top_words_examples() {
        let vocab = ["a", "france", "paris", "z"];
        let base = base_model(array![[1.0]], array![[0.0, 0.5, 0.1, 0.0]], &vocab);
        let top = topic_top_words(&base, 0, None, 2).unwrap();
        assert_eq!(top, vec![("france".to_string(), 0.5), ("paris".to_string(), 0.1)]);
        assert_eq!(topic_top_words(&base, 0, None, 99).unwrap().len(), 4);
        assert!(topic_top_words(&base, 0, Some(0), 2).is_err());
        assert!(topic_top_words(&base, 1, None, 2).is_err());

        let dead = base_model(array![[1.0]], array![[0.0, 0.0, 0.0, 0.0]], &["c", "a", "d", "b"]);
        let top = topic_top_words(&dead, 0, None, 3).unwrap();
        assert_eq!(top, vec![("a".to_string(), 0.0), ("b".to_string(), 0.0), ("c".to_string(), 0.0)]);
    }

    #[test]
    fn writes_csv_and_jsonl() {
        use chrono::TimeZone;
        let m = km(array![[1.0, 0.0], [0.0, 1.0]], &["a", "b"]);
        let slices = [SliceRows { index: 0, rows: vec![0] }, SliceRows { index: 1, rows: vec![1] }];
        let dm = fit_dynamic(&m, &slices, &SolverConfig::new(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let t0 = Utc.with_ymd_and_hms(2024, 5, 1, 0, 0, 0).unwrap();
        let starts = [t0, t0 + chrono::Duration::hours(6)];
        dm.write_p_hat_csv(dir.path().join("p.csv"), &starts).unwrap();
        let text = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "slice_start_iso,topic_0,topic_1");
        assert!(lines.next().unwrap().starts_with("2024-05-01T00:00:00Z,"));
        dm.write_top_words_jsonl(dir.path().join("top.jsonl"), 1).unwrap();
        let text = std::fs::read_to_string(dir.path().join("top.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 4);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["slice"], 0);
        assert_eq!(first["words"].as_array().unwrap().len(), 1);
        dm.save_matrices(dir.path()).unwrap();
        assert!(dir.path().join("H_t/slice_000001.knmf").exists());
    }
}
