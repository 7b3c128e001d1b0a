//! Objectives, gradients and stationarity diagnostics for tri-factorization
//! `A ~ B S C` with orthogonality penalties on the columns of `B` and the
//! rows of `C`.
//!
//! The penalized objective is
//!
//! ```text
//! J(B, S, C) = 1/2 ||A - BSC||^2 + alpha/2 ||CC^T - I||^2 + beta/2 ||B^T B - I||^2
//! ```
//!
//! minimized over entrywise nonnegative `B` (M x P), `S` (P x Q) and `C` (Q x N).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{frobenius_sq_diff, hadamard, matmul, mul, DataMatrix, DenseMatrix, MatrixError};

/// Relative threshold below which a factor entry counts as zero in the KKT checks.
pub const KKT_ZERO_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("factor {factor} has negative entry {value} at ({row}, {col})")]
    Infeasible {
        factor: Factor,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),
}

/// Names one of the three factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Factor {
    B,
    S,
    C,
}

impl std::fmt::Display for Factor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Factor::B => "B",
            Factor::S => "S",
            Factor::C => "C",
        };
        f.write_str(name)
    }
}

/// The triple `(B, S, C)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub b: DenseMatrix,
    pub s: DenseMatrix,
    pub c: DenseMatrix,
}

impl FactorModel {
    /// Checks the inner dimension chain `M x P`, `P x Q`, `Q x N`.
    pub fn new(b: DenseMatrix, s: DenseMatrix, c: DenseMatrix) -> Result<Self, MatrixError> {
        if b.cols() != s.rows() {
            return Err(MatrixError::ShapeMismatch {
                op: "factor chain B*S",
                lhs: b.shape(),
                rhs: s.shape(),
            });
        }
        if s.cols() != c.rows() {
            return Err(MatrixError::ShapeMismatch {
                op: "factor chain S*C",
                lhs: s.shape(),
                rhs: c.shape(),
            });
        }
        Ok(FactorModel { b, s, c })
    }

    /// `(M, N, P, Q)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.b.rows(), self.c.cols(), self.b.cols(), self.c.rows())
    }

    pub fn factor(&self, which: Factor) -> &DenseMatrix {
        match which {
            Factor::B => &self.b,
            Factor::S => &self.s,
            Factor::C => &self.c,
        }
    }

    pub fn factor_mut(&mut self, which: Factor) -> &mut DenseMatrix {
        match which {
            Factor::B => &mut self.b,
            Factor::S => &mut self.s,
            Factor::C => &mut self.c,
        }
    }

    /// Largest entry over all three factors.
    pub fn max_entry(&self) -> f64 {
        self.b
            .max_value()
            .max(self.s.max_value())
            .max(self.c.max_value())
    }

    pub fn is_nonnegative(&self) -> bool {
        self.b.is_nonnegative() && self.s.is_nonnegative() && self.c.is_nonnegative()
    }

    /// First negative (or non-finite) entry, if any.
    pub fn check_feasible(&self) -> Result<(), ModelError> {
        for which in [Factor::B, Factor::S, Factor::C] {
            let m = self.factor(which);
            for i in 0..m.rows() {
                for (j, &v) in m.row(i).iter().enumerate() {
                    if !v.is_finite() || v < 0.0 {
                        return Err(ModelError::Infeasible {
                            factor: which,
                            row: i,
                            col: j,
                            value: v,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// `B S C`.
    pub fn reconstruct(&self) -> Result<DenseMatrix, MatrixError> {
        mul(&mul(&self.b, &self.s)?, &self.c)
    }

    pub(crate) fn check_against(&self, a: &DataMatrix) -> Result<(), MatrixError> {
        let (m, n, _, _) = self.dims();
        if a.shape() != (m, n) {
            return Err(MatrixError::ShapeMismatch {
                op: "data vs model",
                lhs: a.shape(),
                rhs: (m, n),
            });
        }
        Ok(())
    }
}

/// Orthogonality weights and factor ranks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Weight on `||CC^T - I||^2`.
    pub alpha: f64,
    /// Weight on `||B^T B - I||^2`.
    pub beta: f64,
    pub p: usize,
    pub q: usize,
}

impl Hyperparams {
    pub fn new(alpha: f64, beta: f64, p: usize, q: usize) -> Self {
        Hyperparams { alpha, beta, p, q }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(ModelError::Hyperparams(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(ModelError::Hyperparams(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.p == 0 || self.q == 0 {
            return Err(ModelError::Hyperparams(format!(
                "ranks must be >= 1, got p = {}, q = {}",
                self.p, self.q
            )));
        }
        Ok(())
    }

    fn check_model(&self, model: &FactorModel) -> Result<(), ModelError> {
        self.validate()?;
        let (_, _, p, q) = model.dims();
        if (p, q) != (self.p, self.q) {
            return Err(MatrixError::ShapeMismatch {
                op: "hyperparameter ranks vs model",
                lhs: (self.p, self.q),
                rhs: (p, q),
            }
            .into());
        }
        Ok(())
    }
}

/// `||X X^T - I||^2`.
fn row_orthogonality_sq(x: &DenseMatrix) -> Result<f64, MatrixError> {
    let gram = matmul(x, x, false, true)?;
    frobenius_sq_diff(&gram, &DenseMatrix::identity(x.rows()))
}

/// `||X^T X - I||^2`.
fn col_orthogonality_sq(x: &DenseMatrix) -> Result<f64, MatrixError> {
    let gram = matmul(x, x, true, false)?;
    frobenius_sq_diff(&gram, &DenseMatrix::identity(x.cols()))
}

/// `1/2 ||A - BC||^2`.
pub fn objective_plain(a: &DataMatrix, b: &DenseMatrix, c: &DenseMatrix) -> Result<f64, MatrixError> {
    let bc = mul(b, c)?;
    Ok(0.5 * frobenius_sq_diff(a, &bc)?)
}

/// Penalized objective evaluated on loose factors; no rank checks.
pub(crate) fn objective_of(
    a: &DataMatrix,
    b: &DenseMatrix,
    s: &DenseMatrix,
    c: &DenseMatrix,
    alpha: f64,
    beta: f64,
) -> Result<f64, MatrixError> {
    let bsc = mul(&mul(b, s)?, c)?;
    let mut j = 0.5 * frobenius_sq_diff(a, &bsc)?;
    if alpha != 0.0 {
        j += 0.25 * alpha * row_orthogonality_sq(c)?;
    }
    if beta != 0.0 {
        j += 0.25 * beta * col_orthogonality_sq(b)?;
    }
    Ok(j)
}

/// Penalized tri-factorization objective
/// `1/2 ||A - BSC||^2 + alpha/4 ||CC^T - I||^2 + beta/4 ||B^T B - I||^2`.
///
/// With these weights [`grad_b`] and [`grad_c`] are exact gradients.
pub fn objective_bnmtf(a: &DataMatrix, model: &FactorModel, hp: &Hyperparams) -> Result<f64, ModelError> {
    hp.check_model(model)?;
    model.check_against(a)?;
    Ok(objective_of(a, &model.b, &model.s, &model.c, hp.alpha, hp.beta)?)
}

/// `grad_B J = B S C C^T S^T - A C^T S^T + beta (B B^T B - B)`.
pub fn grad_b(
    a: &DataMatrix,
    b: &DenseMatrix,
    s: &DenseMatrix,
    c: &DenseMatrix,
    beta: f64,
) -> Result<DenseMatrix, MatrixError> {
    let sc = mul(s, c)?;
    let sc_gram = matmul(&sc, &sc, false, true)?;
    let mut g = mul(b, &sc_gram)?.sub(&matmul(a, &sc, false, true)?)?;
    if beta != 0.0 {
        let btb = matmul(b, b, true, false)?;
        let cubic = mul(b, &btb)?.sub(b)?;
        g = g.add_scaled(&cubic, beta)?;
    }
    Ok(g)
}

/// `grad_C J = S^T B^T B S C - S^T B^T A + alpha (C C^T C - C)`.
pub fn grad_c(
    a: &DataMatrix,
    b: &DenseMatrix,
    s: &DenseMatrix,
    c: &DenseMatrix,
    alpha: f64,
) -> Result<DenseMatrix, MatrixError> {
    let bs = mul(b, s)?;
    let bs_gram = matmul(&bs, &bs, true, false)?;
    let bs_t_a = matmul(a, &bs, true, false)?.transpose();
    let mut g = mul(&bs_gram, c)?.sub(&bs_t_a)?;
    if alpha != 0.0 {
        let cct = matmul(c, c, false, true)?;
        let cubic = mul(&cct, c)?.sub(c)?;
        g = g.add_scaled(&cubic, alpha)?;
    }
    Ok(g)
}

/// `grad_S J = B^T B S C C^T - B^T A C^T`.
pub fn grad_s(
    a: &DataMatrix,
    b: &DenseMatrix,
    s: &DenseMatrix,
    c: &DenseMatrix,
) -> Result<DenseMatrix, MatrixError> {
    let btb = matmul(b, b, true, false)?;
    let cct = matmul(c, c, false, true)?;
    let ac_t = matmul(a, c, false, true)?;
    let bt_a_ct = matmul(b, &ac_t, true, false)?;
    mul(&mul(&btb, s)?, &cct)?.sub(&bt_a_ct)
}

/// The three gradients of the penalized objective at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub b: DenseMatrix,
    pub s: DenseMatrix,
    pub c: DenseMatrix,
}

impl Gradients {
    pub fn of(&self, which: Factor) -> &DenseMatrix {
        match which {
            Factor::B => &self.b,
            Factor::S => &self.s,
            Factor::C => &self.c,
        }
    }
}

pub fn grad_bnmtf(a: &DataMatrix, model: &FactorModel, hp: &Hyperparams) -> Result<Gradients, ModelError> {
    hp.check_model(model)?;
    model.check_against(a)?;
    let FactorModel { b, s, c } = model;
    Ok(Gradients {
        b: grad_b(a, b, s, c, hp.beta)?,
        s: grad_s(a, b, s, c)?,
        c: grad_c(a, b, s, c, hp.alpha)?,
    })
}

/// Multiplier estimates used by the original multiplicative scheme:
/// `Lambda_B = B^T A C^T S^T - S C C^T S^T` and
/// `Lambda_C = S^T B^T A C^T - S^T B^T B S`.
///
/// These are exact only on the diagonal and may contain negative entries.
pub fn lambda_estimates(a: &DataMatrix, model: &FactorModel) -> Result<(DenseMatrix, DenseMatrix), MatrixError> {
    model.check_against(a)?;
    let FactorModel { b, s, c } = model;
    let ac_t = matmul(a, c, false, true)?;
    let bt_a_ct = matmul(b, &ac_t, true, false)?;

    let sc = mul(s, c)?;
    let lambda_b = matmul(&bt_a_ct, s, false, true)?.sub(&matmul(&sc, &sc, false, true)?)?;

    let bs = mul(b, s)?;
    let lambda_c = matmul(s, &bt_a_ct, true, false)?.sub(&matmul(&bs, &bs, true, false)?)?;
    Ok((lambda_b, lambda_c))
}

/// Violations of the first-order optimality conditions.
///
/// `min_grad_*` is the magnitude of the most negative gradient entry taken
/// over entries where the factor is (numerically) zero, or 0 when no such
/// entry has a negative gradient. `comp_slack_*` is the largest
/// `|grad ⊙ factor|` entry. `overall` is the largest of the six.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    pub min_grad_b: f64,
    pub min_grad_s: f64,
    pub min_grad_c: f64,
    pub comp_slack_b: f64,
    pub comp_slack_s: f64,
    pub comp_slack_c: f64,
    pub overall: f64,
}

/// Returns `(negative-gradient violation at zeros, complementary slackness)`.
pub(crate) fn kkt_parts(factor: &DenseMatrix, grad: &DenseMatrix) -> Result<(f64, f64), MatrixError> {
    let threshold = KKT_ZERO_THRESHOLD * factor.max_value().max(1.0);
    let slack = hadamard(grad, factor)?;
    let comp = slack.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let neg = factor
        .values()
        .iter()
        .zip(grad.values())
        .filter(|(&x, _)| x < threshold)
        .fold(0.0f64, |m, (_, &g)| m.max(-g));
    Ok((neg, comp))
}

pub fn kkt_residual(a: &DataMatrix, model: &FactorModel, hp: &Hyperparams) -> Result<KktResidual, ModelError> {
    model.check_feasible()?;
    let grads = grad_bnmtf(a, model, hp)?;
    Ok(kkt_from_gradients(model, &grads)?)
}

pub(crate) fn kkt_from_gradients(model: &FactorModel, grads: &Gradients) -> Result<KktResidual, MatrixError> {
    let (min_grad_b, comp_slack_b) = kkt_parts(&model.b, &grads.b)?;
    let (min_grad_s, comp_slack_s) = kkt_parts(&model.s, &grads.s)?;
    let (min_grad_c, comp_slack_c) = kkt_parts(&model.c, &grads.c)?;
    let overall = [
        min_grad_b,
        min_grad_s,
        min_grad_c,
        comp_slack_b,
        comp_slack_s,
        comp_slack_c,
    ]
    .into_iter()
    .fold(0.0, f64::max);
    Ok(KktResidual {
        min_grad_b,
        min_grad_s,
        min_grad_c,
        comp_slack_b,
        comp_slack_s,
        comp_slack_c,
        overall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::CsrMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_data(m: DenseMatrix) -> DataMatrix {
        DataMatrix::dense(m).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| rng.gen::<f64>())
    }

    fn random_instance(seed: u64, m: usize, n: usize, p: usize, q: usize) -> (DataMatrix, FactorModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = dense_data(random(&mut rng, m, n));
        let model = FactorModel::new(random(&mut rng, m, p), random(&mut rng, p, q), random(&mut rng, q, n)).unwrap();
        (a, model)
    }

    /// Block-structured orthonormal instance with exactly representable products.
    fn orthonormal_instance() -> (DataMatrix, FactorModel) {
        // B: 8x2, each column has four 0.5 entries on disjoint rows
        let b = DenseMatrix::from_fn(8, 2, |i, j| if i / 4 == j { 0.5 } else { 0.0 });
        let c = DenseMatrix::from_fn(2, 8, |i, j| if j / 4 == i { 0.5 } else { 0.0 });
        let s = DenseMatrix::from_rows(&[[3.0, 0.0], [0.0, 2.0]]);
        let model = FactorModel::new(b, s, c).unwrap();
        let a = dense_data(model.reconstruct().unwrap());
        (a, model)
    }

    fn direct_objective(a: &DenseMatrix, model: &FactorModel, alpha: f64, beta: f64) -> f64 {
        let (m, n, p, q) = model.dims();
        let mut fit = 0.0;
        for i in 0..m {
            for j in 0..n {
                let mut r = 0.0;
                for k in 0..p {
                    for l in 0..q {
                        r += model.b.get(i, k) * model.s.get(k, l) * model.c.get(l, j);
                    }
                }
                fit += (a.get(i, j) - r).powi(2);
            }
        }
        let mut orth_c = 0.0;
        for k in 0..q {
            for l in 0..q {
                let dot: f64 = (0..n).map(|j| model.c.get(k, j) * model.c.get(l, j)).sum();
                let target = if k == l { 1.0 } else { 0.0 };
                orth_c += (dot - target).powi(2);
            }
        }
        let mut orth_b = 0.0;
        for k in 0..p {
            for l in 0..p {
                let dot: f64 = (0..m).map(|i| model.b.get(i, k) * model.b.get(i, l)).sum();
                let target = if k == l { 1.0 } else { 0.0 };
                orth_b += (dot - target).powi(2);
            }
        }
        0.5 * fit + 0.25 * alpha * orth_c + 0.25 * beta * orth_b
    }

    #[test]
    fn plain_objective_cases() {
        let b = DenseMatrix::from_rows(&[[1.0], [2.0]]);
        let c = DenseMatrix::from_rows(&[[3.0, 1.0]]);
        let a = dense_data(mul(&b, &c).unwrap());
        assert_eq!(objective_plain(&a, &b, &c).unwrap(), 0.0);

        let a = dense_data(DenseMatrix::identity(2));
        let z1 = DenseMatrix::zeros(2, 1);
        let z2 = DenseMatrix::zeros(1, 2);
        assert_eq!(objective_plain(&a, &z1, &z2).unwrap(), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random(&mut rng, 4, 5);
        let b = random(&mut rng, 4, 2);
        let c = random(&mut rng, 2, 5);
        let model = FactorModel::new(b.clone(), DenseMatrix::identity(2), c.clone()).unwrap();
        let oracle = direct_objective(&a, &model, 0.0, 0.0);
        let got = objective_plain(&dense_data(a), &b, &c).unwrap();
        assert!((got - oracle).abs() <= 1e-12 * oracle);
    }

    #[test]
    fn bnmtf_objective_cases() {
        let i2 = DenseMatrix::identity(2);
        let model = FactorModel::new(i2.clone(), i2.clone(), i2.clone()).unwrap();
        let a = dense_data(i2.clone());
        for (alpha, beta) in [(0.0, 0.0), (0.1, 1.0), (7.0, 3.0)] {
            let hp = Hyperparams::new(alpha, beta, 2, 2);
            assert_eq!(objective_bnmtf(&a, &model, &hp).unwrap(), 0.0);
        }

        let z = DenseMatrix::zeros(2, 2);
        let zero_model = FactorModel::new(z.clone(), z.clone(), z.clone()).unwrap();
        let hp = Hyperparams::new(1.0, 1.0, 2, 2);
        assert_eq!(objective_bnmtf(&dense_data(z), &zero_model, &hp).unwrap(), 1.0);

        let (a, model) = random_instance(4, 6, 5, 3, 3);
        let hp = Hyperparams::new(0.1, 1.0, 3, 3);
        let oracle = direct_objective(&a.to_dense(), &model, 0.1, 1.0);
        let got = objective_bnmtf(&a, &model, &hp).unwrap();
        assert!((got - oracle).abs() <= 1e-12 * oracle);
    }

    #[test]
    fn objective_rejects_mismatched_shapes() {
        let (a, model) = random_instance(1, 4, 5, 2, 2);
        assert!(objective_bnmtf(&a, &model, &Hyperparams::new(0.0, 0.0, 3, 2)).is_err());
        let wrong = dense_data(DenseMatrix::zeros(5, 5));
        assert!(objective_bnmtf(&wrong, &model, &Hyperparams::new(0.0, 0.0, 2, 2)).is_err());
        assert!(objective_plain(&wrong, &model.b, &model.c).is_err());
        assert!(FactorModel::new(DenseMatrix::zeros(3, 2), DenseMatrix::zeros(3, 2), DenseMatrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn tri_objective_reduces_to_plain_with_identity_core() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = dense_data(random(&mut rng, 5, 6));
        let b = random(&mut rng, 5, 3);
        let c = random(&mut rng, 3, 6);
        let model = FactorModel::new(b.clone(), DenseMatrix::identity(3), c.clone()).unwrap();
        let tri = objective_bnmtf(&a, &model, &Hyperparams::new(0.0, 0.0, 3, 3)).unwrap();
        let plain = objective_plain(&a, &b, &c).unwrap();
        assert!((tri - plain).abs() <= 1e-14 * plain);
    }

    #[test]
    fn gradients_vanish_at_orthonormal_fit() {
        let (a, model) = orthonormal_instance();
        let grads = grad_bnmtf(&a, &model, &Hyperparams::new(0.7, 2.0, 2, 2)).unwrap();
        for g in [&grads.b, &grads.s, &grads.c] {
            assert!(g.values().iter().all(|&v| v == 0.0), "{g:?}");
        }
    }

    #[test]
    fn core_gradient_is_zero_when_b_is_zero() {
        let (a, mut model) = random_instance(2, 4, 4, 2, 2);
        model.b = DenseMatrix::zeros(4, 2);
        let grads = grad_bnmtf(&a, &model, &Hyperparams::new(1.0, 1.0, 2, 2)).unwrap();
        assert!(grads.s.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_central_differences() {
        let (a, model) = random_instance(5, 5, 4, 2, 2);
        let hp = Hyperparams::new(0.1, 1.0, 2, 2);
        let grads = grad_bnmtf(&a, &model, &hp).unwrap();
        let h = 1e-6;
        for which in [Factor::B, Factor::S, Factor::C] {
            let (rows, cols) = model.factor(which).shape();
            for i in 0..rows {
                for j in 0..cols {
                    let mut plus = model.clone();
                    let x = plus.factor(which).get(i, j);
                    plus.factor_mut(which).set(i, j, x + h);
                    let mut minus = model.clone();
                    minus.factor_mut(which).set(i, j, x - h);
                    let fd = (objective_bnmtf(&a, &plus, &hp).unwrap() - objective_bnmtf(&a, &minus, &hp).unwrap())
                        / (2.0 * h);
                    let g = grads.of(which).get(i, j);
                    let err = (g - fd).abs();
                    assert!(err <= 1e-5 * g.abs().max(fd.abs()) || err <= 1e-8, "{which} ({i},{j}): {g} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn lambda_cases() {
        // S = I so that A = BC with orthonormal B and C
        let b = DenseMatrix::from_fn(8, 2, |i, j| if i / 4 == j { 0.5 } else { 0.0 });
        let c = DenseMatrix::from_fn(2, 8, |i, j| if j / 4 == i { 0.5 } else { 0.0 });
        let model = FactorModel::new(b, DenseMatrix::identity(2), c).unwrap();
        let a = dense_data(model.reconstruct().unwrap());
        let (lb, lc) = lambda_estimates(&a, &model).unwrap();
        assert!(lb.values().iter().chain(lc.values()).all(|&v| v == 0.0));

        let z = |r, c| DenseMatrix::zeros(r, c);
        let zero_model = FactorModel::new(z(3, 2), z(2, 2), z(2, 4)).unwrap();
        let a = dense_data(DenseMatrix::filled(3, 4, 1.0));
        let (lb, lc) = lambda_estimates(&a, &zero_model).unwrap();
        assert_eq!(lb, z(2, 2));
        assert_eq!(lc, z(2, 2));
    }

    #[test]
    fn lambda_matches_direct_formula() {
        let (a, model) = random_instance(13, 4, 4, 2, 2);
        let (lb, lc) = lambda_estimates(&a, &model).unwrap();
        let ad = a.to_dense();
        let t = |x: &DenseMatrix| x.transpose();
        let naive = |x: &DenseMatrix, y: &DenseMatrix| {
            DenseMatrix::from_fn(x.rows(), y.cols(), |i, j| (0..x.cols()).map(|k| x.get(i, k) * y.get(k, j)).sum())
        };
        let FactorModel { b, s, c } = &model;
        let lb_oracle = naive(&naive(&naive(&t(b), &ad), &t(c)), &t(s))
            .sub(&naive(&naive(&naive(s, c), &t(c)), &t(s)))
            .unwrap();
        let lc_oracle = naive(&naive(&naive(&t(s), &t(b)), &ad), &t(c))
            .sub(&naive(&naive(&naive(&t(s), &t(b)), b), s))
            .unwrap();
        for (x, y) in lb.values().iter().zip(lb_oracle.values()).chain(lc.values().iter().zip(lc_oracle.values())) {
            assert!((x - y).abs() <= 1e-13 * x.abs().max(y.abs()).max(1.0));
        }
    }

    #[test]
    fn kkt_zero_at_exact_fit_and_positive_after_perturbation() {
        let (a, model) = orthonormal_instance();
        let hp = Hyperparams::new(0.1, 1.0, 2, 2);
        assert_eq!(kkt_residual(&a, &model, &hp).unwrap().overall, 0.0);

        let mut perturbed = model.clone();
        perturbed.b.set(0, 0, 0.6);
        assert!(kkt_residual(&a, &perturbed, &hp).unwrap().overall > 0.0);
    }

    #[test]
    fn kkt_comp_slack_definition() {
        let factor = DenseMatrix::from_rows(&[[1.0, 0.0]]);
        let grad = DenseMatrix::from_rows(&[[0.5, -0.25]]);
        let (neg, comp) = kkt_parts(&factor, &grad).unwrap();
        assert!(comp >= 0.5);
        assert_eq!(neg, 0.25);
    }

    #[test]
    fn kkt_matches_brute_force_scan() {
        let (a, mut model) = random_instance(17, 6, 5, 3, 3);
        model.b.set(0, 1, 0.0);
        model.c.set(2, 3, 0.0);
        model.s.set(1, 1, 0.0);
        let hp = Hyperparams::new(0.1, 1.0, 3, 3);
        let res = kkt_residual(&a, &model, &hp).unwrap();
        let grads = grad_bnmtf(&a, &model, &hp).unwrap();
        let mut worst = 0.0f64;
        for which in [Factor::B, Factor::S, Factor::C] {
            let f = model.factor(which);
            let g = grads.of(which);
            for i in 0..f.rows() {
                for j in 0..f.cols() {
                    worst = worst.max((f.get(i, j) * g.get(i, j)).abs());
                    if f.get(i, j) == 0.0 && g.get(i, j) < 0.0 {
                        worst = worst.max(-g.get(i, j));
                    }
                }
            }
        }
        assert_eq!(res.overall, worst);
    }

    #[test]
    fn kkt_rejects_infeasible_model() {
        let (a, mut model) = random_instance(3, 4, 4, 2, 2);
        model.c.set(1, 2, -0.1);
        let err = kkt_residual(&a, &model, &Hyperparams::new(0.1, 1.0, 2, 2)).unwrap_err();
        assert!(matches!(err, ModelError::Infeasible { factor: Factor::C, row: 1, col: 2, .. }));
    }

    #[test]
    fn sparse_and_dense_data_agree() {
        let (a, model) = random_instance(31, 6, 7, 2, 2);
        let mut dense = a.to_dense();
        for i in 0..6 {
            for j in 0..7 {
                if (i + j) % 3 != 0 {
                    dense.set(i, j, 0.0);
                }
            }
        }
        let sparse = DataMatrix::Sparse(CsrMatrix::from_dense(&dense).unwrap());
        let dense = dense_data(dense);
        let hp = Hyperparams::new(0.3, 0.7, 2, 2);
        let j1 = objective_bnmtf(&dense, &model, &hp).unwrap();
        let j2 = objective_bnmtf(&sparse, &model, &hp).unwrap();
        assert!((j1 - j2).abs() <= 1e-13 * j1);
        let g1 = grad_bnmtf(&dense, &model, &hp).unwrap();
        let g2 = grad_bnmtf(&sparse, &model, &hp).unwrap();
        for which in [Factor::B, Factor::S, Factor::C] {
            assert!(g1.of(which).max_abs_diff(g2.of(which)).unwrap() <= 1e-12);
        }
    }
}
