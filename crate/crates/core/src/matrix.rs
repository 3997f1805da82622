//! Compressed sparse row storage and the `KNMF` binary matrix format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"KNMF" | version: u8 = 1 | flag: u8 (0 dense, 1 sparse)
//! dense:  rows: u32 | cols: u32 | rows*cols f64, row-major
//! sparse: rows: u32 | cols: u32 | nnz: u64 | nnz * (row: u32, col: u32, value: f64)
//! ```
//!
//! Sparse triples are sorted by `(row, col)`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"KNMF";
pub const FORMAT_VERSION: u8 = 1;

/// Row-compressed sparse matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from `(row, col, value)` triples. Duplicate coordinates are summed,
    /// explicit zeros dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(r, c, _) in &triplets {
            if r >= rows || c >= cols {
                return Err(Error::invalid(format!(
                    "triplet ({r}, {c}) outside {rows}x{cols} matrix"
                )));
            }
        }
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        let mut m = SparseMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        };
        m.prune_zeros();
        Ok(m)
    }

    /// Builds from per-row `(col, value)` lists. Columns within a row must be
    /// distinct; they are sorted here.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        let mut triplets = Vec::new();
        for (r, row) in rows.into_iter().enumerate() {
            triplets.extend(row.into_iter().map(|(c, v)| (r, c, v)));
        }
        Self::from_triplets(n, cols, triplets)
    }

    pub fn from_dense(dense: ArrayView2<'_, f64>) -> Self {
        let (rows, cols) = dense.dim();
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in dense.rows() {
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        SparseMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    fn prune_zeros(&mut self) {
        if self.values.iter().all(|&v| v != 0.0) {
            return;
        }
        let mut indptr = vec![0usize; self.rows + 1];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr[r + 1] = indices.len();
        }
        self.indptr = indptr;
        self.indices = indices;
        self.values = values;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    /// Stored `(col, value)` pairs of row `r`, ascending by column.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// All stored entries as `(row, col, value)`, sorted by `(row, col)`.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(i) => self.values[span.start + i],
            Err(_) => 0.0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for (r, c, v) in self.triplets() {
            out[[r, c]] = v;
        }
        out
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// First stored non-finite entry, if any.
    pub fn find_non_finite(&self) -> Option<(usize, usize)> {
        self.triplets()
            .find(|&(_, _, v)| !v.is_finite())
            .map(|(r, c, _)| (r, c))
    }

    pub fn min_value(&self) -> Option<f64> {
        self.values.iter().copied().reduce(f64::min)
    }

    /// New matrix made of the listed rows, in the listed order.
    pub fn select_rows(&self, rows: &[usize]) -> SparseMatrix {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for &r in rows {
            let span = self.indptr[r]..self.indptr[r + 1];
            indices.extend_from_slice(&self.indices[span.clone()]);
            values.extend_from_slice(&self.values[span]);
            indptr.push(indices.len());
        }
        SparseMatrix {
            rows: rows.len(),
            cols: self.cols,
            indptr,
            indices,
            values,
        }
    }

    /// `self · B` for a dense `B` of shape `cols × k`.
    pub fn dot_dense(&self, b: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(b.nrows(), self.cols, "inner dimension mismatch");
        let k = b.ncols();
        let mut out = Array2::zeros((self.rows, k));
        for (r, mut out_row) in out.rows_mut().into_iter().enumerate() {
            for (c, v) in self.row(r) {
                out_row.scaled_add(v, &b.row(c));
            }
        }
        out
    }

    /// `selfᵀ · A` for a dense `A` of shape `rows × k`; result is `cols × k`.
    pub fn t_dot_dense(&self, a: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(a.nrows(), self.rows, "inner dimension mismatch");
        let k = a.ncols();
        let mut out = Array2::zeros((self.cols, k));
        for r in 0..self.rows {
            let a_row = a.row(r);
            for (c, v) in self.row(r) {
                out.row_mut(c).scaled_add(v, &a_row);
            }
        }
        out
    }
}

/// Contents of a matrix file.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixFile {
    Dense(Array2<f64>),
    Sparse(SparseMatrix),
}

impl MatrixFile {
    pub fn into_dense(self) -> Array2<f64> {
        match self {
            MatrixFile::Dense(d) => d,
            MatrixFile::Sparse(s) => s.to_dense(),
        }
    }

    pub fn into_sparse(self) -> SparseMatrix {
        match self {
            MatrixFile::Dense(d) => SparseMatrix::from_dense(d.view()),
            MatrixFile::Sparse(s) => s,
        }
    }
}

fn dim_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} exceeds u32")))
}

pub fn encode_dense(m: ArrayView2<'_, f64>) -> Result<Vec<u8>> {
    let (rows, cols) = m.dim();
    let mut buf = Vec::with_capacity(14 + rows * cols * 8);
    buf.extend_from_slice(MAGIC);
    buf.push(FORMAT_VERSION);
    buf.push(0);
    buf.extend_from_slice(&dim_u32(rows, "rows")?.to_le_bytes());
    buf.extend_from_slice(&dim_u32(cols, "cols")?.to_le_bytes());
    for &v in m.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn encode_sparse(m: &SparseMatrix) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(22 + m.nnz() * 16);
    buf.extend_from_slice(MAGIC);
    buf.push(FORMAT_VERSION);
    buf.push(1);
    buf.extend_from_slice(&dim_u32(m.rows, "rows")?.to_le_bytes());
    buf.extend_from_slice(&dim_u32(m.cols, "cols")?.to_le_bytes());
    buf.extend_from_slice(&(m.nnz() as u64).to_le_bytes());
    for (r, c, v) in m.triplets() {
        buf.extend_from_slice(&(r as u32).to_le_bytes());
        buf.extend_from_slice(&(c as u32).to_le_bytes());
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<MatrixFile> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = cur.u8()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let flag = cur.u8()?;
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    let out = match flag {
        0 => {
            let len = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Format("dense size overflow".into()))?;
            if bytes.len() - cur.pos != len * 8 {
                return Err(Error::Format(format!(
                    "dense payload has {} bytes, expected {}",
                    bytes.len() - cur.pos,
                    len * 8
                )));
            }
            let data = (0..len).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
            MatrixFile::Dense(Array2::from_shape_vec((rows, cols), data).expect("shape checked"))
        }
        1 => {
            let nnz = cur.u64()? as usize;
            if (bytes.len() - cur.pos) as u64 != nnz as u64 * 16 {
                return Err(Error::Format("sparse payload length mismatch".into()));
            }
            let mut indptr = vec![0usize; rows + 1];
            let mut indices = Vec::with_capacity(nnz);
            let mut values = Vec::with_capacity(nnz);
            let mut prev: Option<(usize, usize)> = None;
            for _ in 0..nnz {
                let r = cur.u32()? as usize;
                let c = cur.u32()? as usize;
                let v = cur.f64()?;
                if r >= rows || c >= cols {
                    return Err(Error::Format(format!("entry ({r}, {c}) out of bounds")));
                }
                if prev.is_some_and(|p| p >= (r, c)) {
                    return Err(Error::Format("entries not sorted by (row, col)".into()));
                }
                prev = Some((r, c));
                indptr[r + 1] += 1;
                indices.push(c);
                values.push(v);
            }
            for r in 0..rows {
                indptr[r + 1] += indptr[r];
            }
            MatrixFile::Sparse(SparseMatrix {
                rows,
                cols,
                indptr,
                indices,
                values,
            })
        }
        f => return Err(Error::Format(format!("unknown storage flag {f}"))),
    };
    Ok(out)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn write_dense(path: impl AsRef<Path>, m: ArrayView2<'_, f64>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_dense(m)?)
}

pub fn write_sparse(path: impl AsRef<Path>, m: &SparseMatrix) -> Result<()> {
    write_bytes(path.as_ref(), &encode_sparse(m)?)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<MatrixFile> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Newline-delimited names; line `i` names row `i` of the companion matrix.
pub fn write_ids<S: AsRef<str>>(path: impl AsRef<Path>, ids: &[S]) -> Result<()> {
    let path = path.as_ref();
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for id in ids {
        writeln!(f, "{}", id.as_ref()).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ids(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .map(|l| {
            l.map(|s| s.trim_end_matches('\r').to_string())
                .map_err(|e| Error::io(path, e))
        })
        .collect()
}
