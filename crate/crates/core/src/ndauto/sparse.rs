use super::Tensor;
use crate::error::{Error, Result};

/// Compressed sparse row matrix.
///
/// Column indices are strictly increasing within each row, so duplicate
/// `(row, col)` pairs never appear; builders sum them instead.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Validates raw CSR arrays.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1 || row_ptr[0] != 0 {
            return Err(Error::dim(
                "sparse",
                "row_ptr must have rows+1 entries starting at 0",
            ));
        }
        if *row_ptr.last().unwrap() != col_idx.len() || col_idx.len() != values.len() {
            return Err(Error::dim(
                "sparse",
                "row_ptr end, col_idx and values disagree on nnz",
            ));
        }
        for r in 0..rows {
            if row_ptr[r] > row_ptr[r + 1] {
                return Err(Error::dim(
                    "sparse",
                    format!("row_ptr decreases at row {r}"),
                ));
            }
            let cols_r = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            if cols_r.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::dim(
                    "sparse",
                    format!("row {r} column indices are not strictly increasing"),
                ));
            }
            if cols_r.iter().any(|&c| c >= cols) {
                return Err(Error::dim(
                    "sparse",
                    format!("row {r} has a column out of range"),
                ));
            }
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds from unordered triplets; duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut counts = vec![0usize; rows];
        for &(r, c, _) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::dim(
                    "sparse",
                    format!("triplet ({r}, {c}) outside {rows}x{cols}"),
                ));
            }
            counts[r] += 1;
        }
        let mut bucket_start = vec![0usize; rows + 1];
        for r in 0..rows {
            bucket_start[r + 1] = bucket_start[r] + counts[r];
        }
        let mut fill = bucket_start.clone();
        let mut entries = vec![(0usize, 0.0f64); triplets.len()];
        for &(r, c, v) in triplets {
            entries[fill[r]] = (c, v);
            fill[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        for r in 0..rows {
            let bucket = &mut entries[bucket_start[r]..bucket_start[r + 1]];
            // stable, so duplicate entries are summed in insertion order
            bucket.sort_by_key(|e| e.0);
            for &(c, v) in bucket.iter() {
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Keeps the non-zero entries of a dense tensor.
    pub fn from_dense(t: &Tensor) -> Self {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for r in 0..t.rows() {
            for (c, &v) in t.row(r).iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            rows: t.rows(),
            cols: t.cols(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
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

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Same pattern, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.nnz() {
            return Err(Error::dim("sparse", "value count differs from nnz"));
        }
        Ok(SparseMatrix {
            values,
            ..self.clone()
        })
    }

    /// `(col, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// Row index of every stored entry.
    pub fn row_of_entries(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            out.extend(std::iter::repeat_n(
                r,
                self.row_ptr[r + 1] - self.row_ptr[r],
            ));
        }
        out
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                t.set(r, c, v);
            }
        }
        t
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let row_ptr = counts.clone();
        let mut fill = counts;
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // rows visited ascending, so each output row comes out sorted
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                col_idx[fill[c]] = r;
                values[fill[c]] = v;
                fill[c] += 1;
            }
        }
        SparseMatrix {
            rows: self.cols,
            cols: self.rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Rows reordered so that output row `i` is input row `perm[i]`.
    pub fn permute_rows(&self, perm: &[usize]) -> SparseMatrix {
        assert_eq!(perm.len(), self.rows);
        let mut row_ptr = Vec::with_capacity(self.rows + 1);
        let mut col_idx = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        row_ptr.push(0);
        for &src in perm {
            let span = self.row_ptr[src]..self.row_ptr[src + 1];
            col_idx.extend_from_slice(&self.col_idx[span.clone()]);
            values.extend_from_slice(&self.values[span]);
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// `self * dense` without tape recording.
    pub fn matmul_dense(&self, dense: &Tensor) -> Result<Tensor> {
        if self.cols != dense.rows() {
            return Err(Error::dim(
                "spmm",
                format!("{}x{} sparse x {:?}", self.rows, self.cols, dense.shape()),
            ));
        }
        let mut out = Tensor::zeros(self.rows, dense.cols());
        spmm_into(
            self,
            &self.values,
            dense.data(),
            dense.cols(),
            out.data_mut(),
        );
        Ok(out)
    }

    /// Largest absolute asymmetry `|A_ij - A_ji|`; `None` for non-square matrices.
    pub fn max_asymmetry(&self) -> Option<f64> {
        if self.rows != self.cols {
            return None;
        }
        let mut worst = 0.0f64;
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        Some(worst)
    }
}

/// `out += A * B` using `values` in place of the stored values of `a`.
pub(crate) fn spmm_into(a: &SparseMatrix, values: &[f64], b: &[f64], n: usize, out: &mut [f64]) {
    for r in 0..a.rows {
        let orow = &mut out[r * n..(r + 1) * n];
        for e in a.row_ptr[r]..a.row_ptr[r + 1] {
            let v = values[e];
            let brow = &b[a.col_idx[e] * n..(a.col_idx[e] + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += v * bv;
            }
        }
    }
}

/// `out += A^T * G` using `values` for the entries of `a`.
pub(crate) fn spmm_t_into(a: &SparseMatrix, values: &[f64], g: &[f64], n: usize, out: &mut [f64]) {
    for r in 0..a.rows {
        let grow = &g[r * n..(r + 1) * n];
        for e in a.row_ptr[r]..a.row_ptr[r + 1] {
            let v = values[e];
            let c = a.col_idx[e];
            let orow = &mut out[c * n..(c + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += v * gv;
            }
        }
    }
}
