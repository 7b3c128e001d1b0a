//! Dense and CSR kernels used by the update rules.
//!
//! Every kernel allocates its output; nothing writes into a buffer that is
//! also an input.

mod csr;
mod dense;

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csr::CsrMatrix;
pub use dense::DenseMatrix;

/// Environment variable capping the number of threads a single product may use.
pub const THREADS_ENV: &str = "ORTHO_NMF_THREADS";

/// Products below this many multiply-adds always run on the calling thread.
const PARALLEL_WORK_THRESHOLD: usize = 1 << 18;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("buffer of length {len} cannot hold a {rows}x{cols} matrix")]
    BufferLength { rows: usize, cols: usize, len: usize },
    #[error("invalid CSR structure: {0}")]
    InvalidCsr(String),
    #[error("entry ({row}, {col}) = {value} is negative or not finite")]
    NegativeEntry { row: usize, col: usize, value: f64 },
}

/// The data matrix `A`, stored sparse or dense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataMatrix {
    Dense(DenseMatrix),
    Sparse(CsrMatrix),
}

impl DataMatrix {
    /// Wraps a dense matrix after checking it is nonnegative and finite.
    pub fn dense(m: DenseMatrix) -> Result<Self, MatrixError> {
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(MatrixError::NegativeEntry {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
        Ok(DataMatrix::Dense(m))
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            DataMatrix::Dense(m) => m.shape(),
            DataMatrix::Sparse(m) => m.shape(),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            DataMatrix::Dense(m) => m.clone(),
            DataMatrix::Sparse(m) => m.to_dense(),
        }
    }

    /// Visits every nonzero entry in row-major order.
    pub fn for_each_nonzero(&self, mut f: impl FnMut(usize, usize, f64)) {
        match self {
            DataMatrix::Dense(m) => {
                for i in 0..m.rows() {
                    for (j, &v) in m.row(i).iter().enumerate() {
                        if v != 0.0 {
                            f(i, j, v);
                        }
                    }
                }
            }
            DataMatrix::Sparse(m) => {
                for i in 0..m.rows() {
                    for (j, v) in m.row_entries(i) {
                        f(i, j, v);
                    }
                }
            }
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        match self {
            DataMatrix::Dense(m) => m.frobenius_sq(),
            DataMatrix::Sparse(m) => m.values().iter().map(|v| v * v).sum(),
        }
    }
}

impl From<CsrMatrix> for DataMatrix {
    fn from(m: CsrMatrix) -> Self {
        DataMatrix::Sparse(m)
    }
}

/// Left operand of a product: anything that can multiply a dense matrix.
pub trait Operand {
    fn shape(&self) -> (usize, usize);

    /// `op(self) * rhs` where `op` is the identity or transpose. Shapes are
    /// already validated by [`matmul`].
    fn mul_dense(&self, transpose: bool, rhs: &DenseMatrix) -> DenseMatrix;

    /// `sum((self - y)^2)`; shapes already validated.
    fn sq_diff_dense(&self, y: &DenseMatrix) -> f64;
}

/// Number of worker threads a single kernel call may use.
pub fn kernel_threads() -> usize {
    static THREADS: OnceLock<usize> = OnceLock::new();
    *THREADS.get_or_init(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or(1)
    })
}

/// Fills `out` row by row. Each row is produced by the same sequential loop
/// whether or not the rows are spread over threads, so the result does not
/// depend on the thread count.
fn fill_rows(out: &mut DenseMatrix, work: usize, f: impl Fn(usize, &mut [f64]) + Sync) {
    fill_rows_with(out, kernel_threads(), work, f)
}

fn fill_rows_with(
    out: &mut DenseMatrix,
    threads: usize,
    work: usize,
    f: impl Fn(usize, &mut [f64]) + Sync,
) {
    let cols = out.cols();
    let rows = out.rows();
    if cols == 0 || rows == 0 {
        return;
    }
    let threads = threads.min(rows);
    if threads <= 1 || work < PARALLEL_WORK_THRESHOLD {
        for (i, row) in out.values_mut().chunks_mut(cols).enumerate() {
            f(i, row);
        }
        return;
    }
    let rows_per = rows.div_ceil(threads);
    std::thread::scope(|scope| {
        for (chunk_idx, chunk) in out.values_mut().chunks_mut(rows_per * cols).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (k, row) in chunk.chunks_mut(cols).enumerate() {
                    f(chunk_idx * rows_per + k, row);
                }
            });
        }
    });
}

impl Operand for DenseMatrix {
    fn shape(&self) -> (usize, usize) {
        DenseMatrix::shape(self)
    }

    fn mul_dense(&self, transpose: bool, rhs: &DenseMatrix) -> DenseMatrix {
        let (out_rows, inner) = if transpose {
            (self.cols(), self.rows())
        } else {
            (self.rows(), self.cols())
        };
        let mut out = DenseMatrix::zeros(out_rows, rhs.cols());
        let work = out_rows * inner * rhs.cols();
        fill_rows(&mut out, work, |i, out_row| {
            for p in 0..inner {
                let a = if transpose { self.get(p, i) } else { self.get(i, p) };
                if a == 0.0 {
                    continue;
                }
                for (o, &r) in out_row.iter_mut().zip(rhs.row(p)) {
                    *o += a * r;
                }
            }
        });
        out
    }

    fn sq_diff_dense(&self, y: &DenseMatrix) -> f64 {
        self.values()
            .iter()
            .zip(y.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

impl Operand for CsrMatrix {
    fn shape(&self) -> (usize, usize) {
        CsrMatrix::shape(self)
    }

    fn mul_dense(&self, transpose: bool, rhs: &DenseMatrix) -> DenseMatrix {
        if !transpose {
            let mut out = DenseMatrix::zeros(self.rows(), rhs.cols());
            let work = self.nnz() * rhs.cols();
            fill_rows(&mut out, work, |i, out_row| {
                for (p, a) in self.row_entries(i) {
                    for (o, &r) in out_row.iter_mut().zip(rhs.row(p)) {
                        *o += a * r;
                    }
                }
            });
            out
        } else {
            // scatter: row i of A contributes a_ij * rhs[i, :] to output row j
            let mut out = DenseMatrix::zeros(self.cols(), rhs.cols());
            let k = rhs.cols();
            let values = out.values_mut();
            for i in 0..self.rows() {
                let r = rhs.row(i);
                for (j, a) in self.row_entries(i) {
                    for (o, &rv) in values[j * k..(j + 1) * k].iter_mut().zip(r) {
                        *o += a * rv;
                    }
                }
            }
            out
        }
    }

    fn sq_diff_dense(&self, y: &DenseMatrix) -> f64 {
        let mut total = 0.0;
        for i in 0..self.rows() {
            let yr = y.row(i);
            let mut entries = self.row_entries(i).peekable();
            for (j, &yv) in yr.iter().enumerate() {
                let xv = match entries.peek() {
                    Some(&(c, v)) if c == j => {
                        entries.next();
                        v
                    }
                    _ => 0.0,
                };
                total += (xv - yv) * (xv - yv);
            }
        }
        total
    }
}

impl Operand for DataMatrix {
    fn shape(&self) -> (usize, usize) {
        DataMatrix::shape(self)
    }

    fn mul_dense(&self, transpose: bool, rhs: &DenseMatrix) -> DenseMatrix {
        match self {
            DataMatrix::Dense(m) => m.mul_dense(transpose, rhs),
            DataMatrix::Sparse(m) => m.mul_dense(transpose, rhs),
        }
    }

    fn sq_diff_dense(&self, y: &DenseMatrix) -> f64 {
        match self {
            DataMatrix::Dense(m) => m.sq_diff_dense(y),
            DataMatrix::Sparse(m) => m.sq_diff_dense(y),
        }
    }
}

/// `op(lhs) * op(rhs)` with optional transposes on either side.
pub fn matmul<L: Operand + ?Sized>(
    lhs: &L,
    rhs: &DenseMatrix,
    transpose_lhs: bool,
    transpose_rhs: bool,
) -> Result<DenseMatrix, MatrixError> {
    let (lr, lc) = lhs.shape();
    let (rr, rc) = rhs.shape();
    let lhs_eff = if transpose_lhs { (lc, lr) } else { (lr, lc) };
    let rhs_eff = if transpose_rhs { (rc, rr) } else { (rr, rc) };
    if lhs_eff.1 != rhs_eff.0 {
        return Err(MatrixError::ShapeMismatch {
            op: "matmul",
            lhs: lhs_eff,
            rhs: rhs_eff,
        });
    }
    if transpose_rhs {
        Ok(lhs.mul_dense(transpose_lhs, &rhs.transpose()))
    } else {
        Ok(lhs.mul_dense(transpose_lhs, rhs))
    }
}

/// Plain product `lhs * rhs`.
pub fn mul<L: Operand + ?Sized>(lhs: &L, rhs: &DenseMatrix) -> Result<DenseMatrix, MatrixError> {
    matmul(lhs, rhs, false, false)
}

/// `||x - y||_F^2`.
pub fn frobenius_sq_diff<X: Operand + ?Sized>(x: &X, y: &DenseMatrix) -> Result<f64, MatrixError> {
    if x.shape() != y.shape() {
        return Err(MatrixError::ShapeMismatch {
            op: "frobenius_sq_diff",
            lhs: x.shape(),
            rhs: y.shape(),
        });
    }
    Ok(x.sq_diff_dense(y))
}

/// Entrywise product.
pub fn hadamard(x: &DenseMatrix, y: &DenseMatrix) -> Result<DenseMatrix, MatrixError> {
    x.zip_map(y, "hadamard", |a, b| a * b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dense(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>())
    }

    fn random_sparse(rng: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..rows {
            for j in 0..cols {
                if rng.gen::<f64>() < density {
                    t.push((i, j, rng.gen::<f64>() + 0.1));
                }
            }
        }
        CsrMatrix::from_triplets(rows, cols, &t).unwrap()
    }

    fn naive(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| {
            let mut s = 0.0;
            for p in 0..a.cols() {
                s += a.get(i, p) * b.get(p, j);
            }
            s
        })
    }

    fn assert_rel_close(x: &DenseMatrix, y: &DenseMatrix, tol: f64) {
        assert_eq!(x.shape(), y.shape());
        for (a, b) in x.values().iter().zip(y.values()) {
            let scale = a.abs().max(b.abs()).max(1e-300);
            assert!((a - b).abs() <= tol * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn identity_is_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_dense(&mut rng, 3, 4);
        let out = mul(&DenseMatrix::identity(3), &x).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn one_by_one() {
        let out = mul(&DenseMatrix::from_rows(&[[2.0]]), &DenseMatrix::from_rows(&[[3.0]])).unwrap();
        assert_eq!(out.values(), &[6.0]);
    }

    #[test]
    fn sparse_times_dense_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_sparse(&mut rng, 4, 3, 0.6);
        let x = random_dense(&mut rng, 3, 2);
        let out = mul(&a, &x).unwrap();
        assert_rel_close(&out, &naive(&a.to_dense(), &x), 1e-13);
    }

    #[test]
    fn transpose_flags_match_materialized_transposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_dense(&mut rng, 5, 4);
        let b = random_dense(&mut rng, 5, 4);
        let s = random_sparse(&mut rng, 5, 4, 0.5);

        let atb = matmul(&a, &b, true, false).unwrap();
        assert_rel_close(&atb, &naive(&a.transpose(), &b), 1e-13);
        let abt = matmul(&a, &b, false, true).unwrap();
        assert_rel_close(&abt, &naive(&a, &b.transpose()), 1e-13);
        let atbt = matmul(&a, &b.transpose(), true, true).unwrap();
        assert_rel_close(&atbt, &naive(&a.transpose(), &b), 1e-13);

        let stb = matmul(&s, &b, true, false).unwrap();
        assert_rel_close(&stb, &naive(&s.to_dense().transpose(), &b), 1e-13);
        let sbt = matmul(&s, &a, false, true).unwrap();
        assert_rel_close(&sbt, &naive(&s.to_dense(), &a.transpose()), 1e-13);
    }

    #[test]
    fn dimension_mismatch_names_both_shapes() {
        let err = mul(&DenseMatrix::zeros(2, 3), &DenseMatrix::zeros(2, 3)).unwrap_err();
        assert_eq!(
            err,
            MatrixError::ShapeMismatch {
                op: "matmul",
                lhs: (2, 3),
                rhs: (2, 3)
            }
        );
        assert!(err.to_string().contains("(2, 3)"));
        assert!(matmul(&DenseMatrix::zeros(2, 3), &DenseMatrix::zeros(2, 3), true, false).is_ok());
    }

    #[test]
    fn frobenius_cases() {
        let i2 = DenseMatrix::identity(2);
        assert_eq!(frobenius_sq_diff(&i2, &DenseMatrix::zeros(2, 2)).unwrap(), 2.0);
        assert_eq!(frobenius_sq_diff(&i2, &i2).unwrap(), 0.0);
        assert!(frobenius_sq_diff(&i2, &DenseMatrix::zeros(2, 3)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_dense(&mut rng, 5, 5);
        let y = random_dense(&mut rng, 5, 5);
        let mut oracle = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                oracle += (x.get(i, j) - y.get(i, j)).powi(2);
            }
        }
        let got = frobenius_sq_diff(&x, &y).unwrap();
        assert!((got - oracle).abs() <= 1e-13 * oracle);
        assert_eq!(got, frobenius_sq_diff(&y, &x).unwrap());

        let s = random_sparse(&mut rng, 5, 5, 0.4);
        let sparse = frobenius_sq_diff(&s, &y).unwrap();
        let dense = frobenius_sq_diff(&s.to_dense(), &y).unwrap();
        assert!((sparse - dense).abs() <= 1e-13 * dense);
    }

    #[test]
    fn hadamard_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_dense(&mut rng, 3, 3);
        assert_eq!(hadamard(&x, &DenseMatrix::filled(3, 3, 1.0)).unwrap(), x);
        assert_eq!(hadamard(&x, &DenseMatrix::zeros(3, 3)).unwrap(), DenseMatrix::zeros(3, 3));
        let y = random_dense(&mut rng, 3, 3);
        let h = hadamard(&x, &y).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(h.get(i, j), x.get(i, j) * y.get(i, j));
            }
        }
        assert!(hadamard(&x, &DenseMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn parallel_rows_match_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_dense(&mut rng, 64, 80);
        let b = random_dense(&mut rng, 80, 70);
        let row_kernel = |i: usize, row: &mut [f64]| {
            for p in 0..80 {
                let x = a.get(i, p);
                for (o, &r) in row.iter_mut().zip(b.row(p)) {
                    *o += x * r;
                }
            }
        };
        let mut seq = DenseMatrix::zeros(64, 70);
        fill_rows_with(&mut seq, 1, usize::MAX, row_kernel);
        let mut par = DenseMatrix::zeros(64, 70);
        fill_rows_with(&mut par, 5, usize::MAX, row_kernel);
        assert_eq!(seq, par);
        assert_eq!(seq, a.mul_dense(false, &b));
    }

    #[test]
    fn data_matrix_rejects_negative_dense() {
        let err = DataMatrix::dense(DenseMatrix::from_rows(&[[1.0, -2.0]])).unwrap_err();
        assert!(matches!(err, MatrixError::NegativeEntry { row: 0, col: 1, .. }));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn nonneg(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
            proptest::collection::vec(0.0f64..10.0, rows * cols)
                .prop_map(move |v| DenseMatrix::from_vec(rows, cols, v).unwrap())
        }

        proptest! {
            #[test]
            fn nonnegative_operands_give_nonnegative_products(
                a in nonneg(4, 3), b in nonneg(3, 5)
            ) {
                let out = mul(&a, &b).unwrap();
                prop_assert!(out.is_nonnegative());
                let sparse = CsrMatrix::from_dense(&a).unwrap();
                prop_assert!(mul(&sparse, &b).unwrap().is_nonnegative());
            }

            #[test]
            fn frobenius_is_symmetric(a in nonneg(3, 4), b in nonneg(3, 4)) {
                prop_assert_eq!(frobenius_sq_diff(&a, &b).unwrap(), frobenius_sq_diff(&b, &a).unwrap());
            }
        }
    }
}
