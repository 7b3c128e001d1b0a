use serde::{Deserialize, Serialize};

use super::{DenseMatrix, MatrixError};

/// Compressed sparse row matrix with nonnegative stored values.
///
/// Column indices are strictly increasing within each row and every stored
/// value is finite and `>= 0`. Explicit zeros are allowed but never produced
/// by the constructors in this crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Validates raw CSR arrays.
    pub fn new(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, MatrixError> {
        let invalid = |msg: String| Err(MatrixError::InvalidCsr(msg));
        if row_ptr.len() != rows + 1 {
            return invalid(format!(
                "row_ptr has length {}, expected {}",
                row_ptr.len(),
                rows + 1
            ));
        }
        if row_ptr[0] != 0 {
            return invalid("row_ptr[0] must be 0".into());
        }
        if col_idx.len() != values.len() {
            return invalid(format!(
                "col_idx length {} differs from values length {}",
                col_idx.len(),
                values.len()
            ));
        }
        if row_ptr[rows] != values.len() {
            return invalid(format!(
                "row_ptr[rows] = {} but nnz = {}",
                row_ptr[rows],
                values.len()
            ));
        }
        for i in 0..rows {
            let (start, end) = (row_ptr[i], row_ptr[i + 1]);
            if start > end {
                return invalid(format!("row_ptr decreases at row {i}"));
            }
            for k in start..end {
                if col_idx[k] >= cols {
                    return invalid(format!(
                        "column index {} out of range in row {i} (cols = {cols})",
                        col_idx[k]
                    ));
                }
                if k > start && col_idx[k] <= col_idx[k - 1] {
                    return invalid(format!("column indices not strictly increasing in row {i}"));
                }
            }
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            let row = row_ptr.partition_point(|&p| p <= k) - 1;
            return Err(MatrixError::NegativeEntry {
                row,
                col: col_idx[k],
                value: values[k],
            });
        }
        Ok(CsrMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds from (row, col, value) triplets. Duplicates are summed and
    /// zero values dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, MatrixError> {
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(i, j, v) in triplets {
            if i >= rows || j >= cols {
                return Err(MatrixError::InvalidCsr(format!(
                    "entry ({i}, {j}) outside {rows}x{cols}"
                )));
            }
            if !v.is_finite() || v < 0.0 {
                return Err(MatrixError::NegativeEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
            sorted.push((i, j, v));
        }
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            last = Some((i, j));
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            values.push(v);
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        // drop explicit zeros
        let mut out = CsrMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        };
        out.prune_zeros();
        Ok(out)
    }

    /// Sparse copy of a nonnegative dense matrix.
    pub fn from_dense(dense: &DenseMatrix) -> Result<Self, MatrixError> {
        let mut triplets = Vec::new();
        for i in 0..dense.rows() {
            for (j, &v) in dense.row(i).iter().enumerate() {
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(dense.rows(), dense.cols(), &triplets)
    }

    fn prune_zeros(&mut self) {
        if self.values.iter().all(|&v| v != 0.0) {
            return;
        }
        let mut row_ptr = vec![0usize; self.rows + 1];
        let mut col_idx = Vec::with_capacity(self.values.len());
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..self.rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.values[k] != 0.0 {
                    col_idx.push(self.col_idx[k]);
                    values.push(self.values[k]);
                }
            }
            row_ptr[i + 1] = values.len();
        }
        self.row_ptr = row_ptr;
        self.col_idx = col_idx;
        self.values = values;
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    /// Column indices and values stored in row `i`.
    #[inline]
    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row_entries(i) {
                out.set(i, j, v);
            }
        }
        out
    }
}
