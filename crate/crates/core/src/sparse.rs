//! Compressed sparse row matrices and deterministic parallel vector kernels.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

/// Block length for reductions. Partial sums are formed per block and then
/// added in block order, so results do not depend on the worker count.
const REDUCE_BLOCK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from per-row entry lists. Entries are sorted by column and
    /// duplicates summed; exact zeros are dropped.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(u32, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        let n_rows = rows.len();
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut i = 0;
            while i < row.len() {
                let c = row[i].0;
                assert!((c as usize) < cols, "column {c} out of range");
                let mut v = row[i].1;
                i += 1;
                while i < row.len() && row[i].0 == c {
                    v += row[i].1;
                    i += 1;
                }
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows: n_rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[s..e], &self.values[s..e])
    }

    pub fn is_row_empty(&self, r: usize) -> bool {
        self.row_ptr[r] == self.row_ptr[r + 1]
    }

    /// `y = M x`, one sequential dot product per row.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(y.len(), self.rows);
        y.par_iter_mut().with_min_len(256).enumerate().for_each(|(r, out)| {
            let (c, v) = self.row(r);
            let mut acc = 0.0;
            for (ci, vi) in c.iter().zip(v) {
                acc += vi * x[*ci as usize];
            }
            *out = acc;
        });
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            counts[c as usize + 1] += 1;
        }
        for i in 0..self.cols {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0u32; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.rows {
            let (c, v) = self.row(r);
            for (ci, vi) in c.iter().zip(v) {
                let slot = next[*ci as usize];
                col_idx[slot] = r as u32;
                values[slot] = *vi;
                next[*ci as usize] += 1;
            }
        }
        CsrMatrix {
            rows: self.cols,
            cols: self.rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Sum of squares of each row, optionally weighting column `j` by `w[j]`.
    /// Applied to a transposed matrix this yields `diag(M^T W M)`.
    pub fn row_square_sums(&self, w: Option<&[f64]>) -> Vec<f64> {
        (0..self.rows)
            .into_par_iter()
            .with_min_len(256)
            .map(|r| {
                let (c, v) = self.row(r);
                let mut acc = 0.0;
                for (ci, vi) in c.iter().zip(v) {
                    acc += match w {
                        Some(w) => w[*ci as usize] * (vi * vi),
                        None => vi * vi,
                    };
                }
                acc
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let (c, v) = self.row(r);
            for (ci, vi) in c.iter().zip(v) {
                m[(r, *ci as usize)] = *vi;
            }
        }
        m
    }

    /// Triplet text: a `rows cols nnz` header, then `row col value` lines.
    pub fn write_triplets(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.rows, self.cols, self.nnz())?;
        for r in 0..self.rows {
            let (c, v) = self.row(r);
            for (ci, vi) in c.iter().zip(v) {
                writeln!(w, "{r} {ci} {vi:e}")?;
            }
        }
        Ok(())
    }
}

/// Deterministic parallel dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let partial: Vec<f64> = a
        .par_chunks(REDUCE_BLOCK)
        .zip(b.par_chunks(REDUCE_BLOCK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partial.iter().sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += s * x`.
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    y.par_iter_mut()
        .with_min_len(REDUCE_BLOCK)
        .zip(x.par_iter())
        .for_each(|(yi, xi)| *yi += s * xi);
}
