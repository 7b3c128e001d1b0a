//! Planted co-cluster data: block-supported factors with orthonormal columns
//! of `B0` and rows of `C0`, so that the orthogonality penalties are
//! attainable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clustering::Assignment;
use crate::matrix::{CsrMatrix, DenseMatrix};
use crate::model::FactorModel;

use super::{Dataset, IoError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub rows: usize,
    pub cols: usize,
    pub p: usize,
    pub q: usize,
    /// Standard deviation of the Gaussian noise added before clipping at 0.
    pub noise: f64,
    /// Probability that an entry is kept; the rest are zeroed.
    pub sparsity: f64,
    pub seed: u64,
}

/// Block index of each of `n` items split into `k` contiguous groups whose
/// sizes differ by at most one.
fn blocks(n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|i| i * k / n).collect()
}

/// Generates `A = mask ⊙ max(0, B0 S0 C0 + noise * E)` together with the
/// planted factors. Document labels are the column blocks, word labels the
/// row blocks. Column block `q` is tied to row block `q mod p`.
pub fn gen_synthetic(params: &SyntheticParams) -> Result<(Dataset, FactorModel), IoError> {
    let SyntheticParams {
        rows: m,
        cols: n,
        p,
        q,
        noise,
        sparsity,
        seed,
    } = *params;
    if p == 0 || q == 0 || m < p || n < q {
        return Err(IoError::Invalid(format!(
            "need 1 <= p <= rows and 1 <= q <= cols, got {m}x{n} with p = {p}, q = {q}"
        )));
    }
    if !(sparsity > 0.0 && sparsity <= 1.0) {
        return Err(IoError::Invalid(format!("sparsity must lie in (0, 1], got {sparsity}")));
    }
    if !noise.is_finite() || noise < 0.0 {
        return Err(IoError::Invalid(format!("noise must be >= 0, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let row_block = blocks(m, p);
    let col_block = blocks(n, q);
    let row_sizes: Vec<usize> = (0..p).map(|k| row_block.iter().filter(|&&b| b == k).count()).collect();
    let col_sizes: Vec<usize> = (0..q).map(|k| col_block.iter().filter(|&&b| b == k).count()).collect();

    let mut b = DenseMatrix::from_fn(m, p, |i, k| if row_block[i] == k { rng.gen_range(0.5..1.5) } else { 0.0 });
    let mut c = DenseMatrix::from_fn(q, n, |k, j| if col_block[j] == k { rng.gen_range(0.5..1.5) } else { 0.0 });
    for k in 0..p {
        let norm = (0..m).map(|i| b.get(i, k).powi(2)).sum::<f64>().sqrt();
        for i in 0..m {
            b.set(i, k, b.get(i, k) / norm);
        }
    }
    for k in 0..q {
        let norm = c.row(k).iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..n {
            c.set(k, j, c.get(k, j) / norm);
        }
    }
    let mut s = DenseMatrix::zeros(p, q);
    for (k, &cols_k) in col_sizes.iter().enumerate() {
        let r = k % p;
        let scale = ((row_sizes[r] * cols_k) as f64).sqrt();
        s.set(r, k, scale * rng.gen_range(1.0..2.0));
    }
    let planted = FactorModel::new(b, s, c)?;
    let clean = planted.reconstruct()?;

    let mut triplets = Vec::new();
    for i in 0..m {
        for j in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            let keep = rng.gen::<f64>() < sparsity;
            let v = (clean.get(i, j) + noise * e).max(0.0);
            if keep && v > 0.0 {
                triplets.push((i, j, v));
            }
        }
    }
    let matrix = CsrMatrix::from_triplets(m, n, &triplets)?.into();
    let ds = Dataset::new(
        format!("synthetic-{m}x{n}-p{p}-q{q}-seed{seed}"),
        matrix,
        Some(Assignment::new(col_block, q)?),
        Some(Assignment::new(row_block, p)?),
    )?;
    Ok((ds, planted))
}
