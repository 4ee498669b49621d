use crate::error::{Error, Result};

use super::DenseMatrix;

/// Compressed sparse row matrix.
///
/// Column indices inside a row are strictly increasing, so iteration order is
/// deterministic and row products sum in ascending column order.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Validates and wraps raw CSR arrays.
    pub fn new(rows: usize, cols: usize, offsets: Vec<usize>, indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if offsets.len() != rows + 1 || offsets[0] != 0 {
            return Err(Error::contract("CSR offsets must have rows+1 entries starting at 0"));
        }
        if offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::contract("CSR offsets must be non-decreasing"));
        }
        if offsets[rows] != indices.len() || indices.len() != values.len() {
            return Err(Error::contract(
                "CSR last offset must equal the number of stored values",
            ));
        }
        for r in 0..rows {
            let cols_in_row = &indices[offsets[r]..offsets[r + 1]];
            if cols_in_row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::contract(format!(
                    "row {r}: column indices not strictly increasing"
                )));
            }
            if cols_in_row.last().is_some_and(|&c| c >= cols) {
                return Err(Error::contract(format!("row {r}: column index out of range")));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("non-finite sparse value"));
        }
        Ok(Self {
            rows,
            cols,
            offsets,
            indices,
            values,
        })
    }

    /// Builds from `(row, col, value)` triplets; duplicate coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        if let Some(&(r, c, _)) = sorted.iter().find(|&&(r, c, _)| r >= rows || c >= cols) {
            return Err(Error::contract(format!("triplet ({r}, {c}) outside {rows}x{cols}")));
        }
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut offsets = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            offsets[r + 1] += 1;
            indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..rows {
            offsets[r + 1] += offsets[r];
        }
        Self::new(rows, cols, offsets, indices, values)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            offsets: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            offsets: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut triplets = Vec::new();
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(m.rows(), m.cols(), &triplets).expect("dense matrix is valid")
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

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Same sparsity pattern with new stored values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::contract("replacement values must match nnz"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("non-finite sparse value"));
        }
        Ok(Self { values, ..self.clone() })
    }

    /// `(column, value)` pairs of row `r` in ascending column order.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[r]..self.offsets[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.offsets[r]..self.offsets[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                m.set(r, c, v);
            }
        }
        m
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                triplets.push((c, r, v));
            }
        }
        Self::from_triplets(self.cols, self.rows, &triplets).expect("transpose of valid CSR is valid")
    }

    /// Exact structural and numeric symmetry.
    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && *self == self.transpose()
    }

    /// Applies a node permutation to rows and columns: entry (i, j) moves to (perm[i], perm[j]).
    pub fn permute_symmetric(&self, perm: &[usize]) -> Result<SparseMatrix> {
        if self.rows != self.cols || perm.len() != self.rows {
            return Err(Error::contract(
                "symmetric permutation needs a square matrix and matching permutation",
            ));
        }
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                triplets.push((perm[r], perm[c], v));
            }
        }
        Self::from_triplets(self.rows, self.cols, &triplets)
    }
}

/// Sparse-dense product `a · b`. Each output row accumulates in ascending column order.
pub fn spmm(a: &SparseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.rows() {
        return Err(Error::contract(format!(
            "spmm shape mismatch: {}x{} · {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut out = DenseMatrix::zeros(a.rows(), b.cols());
    for r in 0..a.rows() {
        let out_row = out.row_mut(r);
        for (c, v) in a.row(r) {
            for (o, &x) in out_row.iter_mut().zip(b.row(c)) {
                *o += v * x;
            }
        }
    }
    Ok(out)
}
