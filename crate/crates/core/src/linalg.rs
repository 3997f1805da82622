//! Dense linear algebra helpers on top of nalgebra: truncated SVD of sparse
//! matrices and least-squares polynomial projection.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::matrix::SparseMatrix;

/// Leading singular triplets, sorted by descending singular value.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// `rows × k`
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    /// `k × cols`
    pub vt: Array2<f64>,
}

const OVERSAMPLE: usize = 10;
const POWER_ITERS: usize = 7;

fn to_na(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| a[[r, c]])
}

fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(r, c)| m[(r, c)])
}

fn orthonormalize(a: Array2<f64>) -> Array2<f64> {
    let qr = to_na(a.view()).qr();
    from_na(&qr.q())
}

/// Rank-`k` truncated SVD. Small matrices use a full dense SVD; larger ones a
/// seeded randomized range finder with power iterations.
///
/// Signs are fixed so that the largest-magnitude entry of every left singular
/// vector is positive. `k` is clamped to `min(rows, cols)`.
pub fn truncated_svd(m: &SparseMatrix, k: usize, seed: u64) -> TruncatedSvd {
    let (rows, cols) = m.shape();
    let k = k.min(rows).min(cols);
    if k == 0 {
        return TruncatedSvd {
            u: Array2::zeros((rows, 0)),
            s: Array1::zeros(0),
            vt: Array2::zeros((0, cols)),
        };
    }
    let l = k + OVERSAMPLE;
    let (u, s, vt) = if rows.min(cols) <= l {
        let dense = to_na(m.to_dense().view());
        dense_svd(dense)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omega = Array2::from_shape_simple_fn((cols, l), || StandardNormal.sample(&mut rng));
        let mut q = orthonormalize(m.dot_dense(omega.view()));
        for _ in 0..POWER_ITERS {
            let z = orthonormalize(m.t_dot_dense(q.view()));
            q = orthonormalize(m.dot_dense(z.view()));
        }
        // B = Qᵀ M, shape l × cols
        let b = m.t_dot_dense(q.view()).reversed_axes();
        let (ub, s, vt) = dense_svd(to_na(b.view()));
        let u = q.dot(&ub);
        (u, s, vt)
    };
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    order.truncate(k);

    let mut out_u = Array2::zeros((rows, k));
    let mut out_s = Array1::zeros(k);
    let mut out_vt = Array2::zeros((k, cols));
    for (j, &src) in order.iter().enumerate() {
        let col = u.column(src);
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        out_u.column_mut(j).assign(&(&col * sign));
        out_vt.row_mut(j).assign(&(&vt.row(src) * sign));
        out_s[j] = s[src];
    }
    TruncatedSvd {
        u: out_u,
        s: out_s,
        vt: out_vt,
    }
}

fn dense_svd(m: DMatrix<f64>) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let svd = m.svd(true, true);
    let u = from_na(svd.u.as_ref().expect("requested u"));
    let vt = from_na(svd.v_t.as_ref().expect("requested v_t"));
    let s = Array1::from_iter(svd.singular_values.iter().copied());
    (u, s, vt)
}

/// Orthogonal projector onto polynomials of a fixed degree sampled at
/// `len` equally spaced points.
#[derive(Debug, Clone)]
pub struct PolynomialProjector {
    hat: Array2<f64>,
}

impl PolynomialProjector {
    pub fn new(len: usize, degree: usize) -> Self {
        let terms = degree + 1;
        let half = (len.max(2) - 1) as f64 / 2.0;
        // abscissae scaled to [-1, 1] for conditioning
        let design = DMatrix::from_fn(len, terms, |r, c| ((r as f64 - half) / half).powi(c as i32));
        let pinv = design
            .clone()
            .pseudo_inverse(1e-12)
            .expect("non-negative epsilon");
        let hat = &design * pinv;
        PolynomialProjector { hat: from_na(&hat) }
    }

    pub fn len(&self) -> usize {
        self.hat.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.hat.nrows() == 0
    }

    /// Least-squares fitted values for `y`.
    pub fn fit(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.len());
        self.hat
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(y).map(|(a, b)| a * b).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn reconstruct(svd: &TruncatedSvd) -> Array2<f64> {
        let us = &svd.u * &svd.s;
        us.dot(&svd.vt)
    }

    #[test]
    fn small_exact_svd() {
        let d = array![[3.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        let svd = truncated_svd(&SparseMatrix::from_dense(d.view()), 2, 0);
        assert!((svd.s[0] - 3.0).abs() < 1e-12);
        assert!((svd.s[1] - 1.0).abs() < 1e-12);
        assert!((reconstruct(&svd) - &d).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn randomized_recovers_low_rank() {
        let a = Array2::from_shape_fn((60, 3), |(r, c)| ((r * 3 + c * 7) % 11) as f64);
        let b = Array2::from_shape_fn((3, 40), |(r, c)| ((r * 5 + c * 2) % 13) as f64);
        let d = a.dot(&b);
        let svd = truncated_svd(&SparseMatrix::from_dense(d.view()), 3, 42);
        let err = (reconstruct(&svd) - &d).iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err / norm < 1e-9, "relative error {err}");
        for w in svd.s.windows(2) {
            assert!(w[0] >= w[1]);
        }
        let again = truncated_svd(&SparseMatrix::from_dense(d.view()), 3, 42);
        assert_eq!(svd.u, again.u);
    }

    #[test]
    fn projector_reproduces_polynomials() {
        let p = PolynomialProjector::new(21, 2);
        let y: Vec<f64> = (0..21).map(|i| 1.0 + 0.5 * i as f64 - 0.01 * (i * i) as f64).collect();
        for (a, b) in p.fit(&y).iter().zip(&y) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
