use crate::matrix::{matmul, mul, DataMatrix, DenseMatrix};
use crate::model::{objective_bnmtf, objective_plain, Factor, FactorModel, Hyperparams};

use super::{ensure_finite, run_sweeps, Algorithm, IterationTrace, NmfFactors, SolveError, SolverConfig};

/// `x * num / (den + delta)` entrywise. Zero entries stay zero without
/// evaluating the ratio.
pub(super) fn multiplicative_update(
    x: &DenseMatrix,
    num: &DenseMatrix,
    den: &DenseMatrix,
    delta: f64,
    factor: Factor,
) -> Result<DenseMatrix, SolveError> {
    x.ensure_same_shape(num, "multiplicative_update")?;
    x.ensure_same_shape(den, "multiplicative_update")?;
    let values = x
        .values()
        .iter()
        .zip(num.values())
        .zip(den.values())
        .map(|((&x, &n), &d)| if x == 0.0 { 0.0 } else { x * n / (d + delta) })
        .collect();
    let out = DenseMatrix::from_vec(x.rows(), x.cols(), values)?;
    ensure_finite(&out, factor)?;
    Ok(out)
}

/// B <- B ⊙ (A C^T S^T + beta B) / (B S C C^T S^T + beta B B^T B + delta)
pub(super) fn mur_update_b(
    a: &DataMatrix,
    b: &DenseMatrix,
    s: &DenseMatrix,
    c: &DenseMatrix,
    beta: f64,
    delta: f64,
) -> Result<DenseMatrix, SolveError> {
    let sc = mul(s, c)?;
    let mut num = matmul(a, &sc, false, true)?;
    let mut den = mul(b, &matmul(&sc, &sc, false, true)?)?;
    if beta != 0.0 {
        num = num.add_scaled(b, beta)?;
        den = den.add_scaled(&mul(b, &matmul(b, b, true, false)?)?, beta)?;
    }
    multiplicative_update(b, &num, &den, delta, Factor::B)
}

/// C <- C ⊙ (S^T B^T A + alpha C) / (S^T B^T B S C + alpha C C^T C + delta)
pub(super) fn mur_update_c(
    a: &DataMatrix,
    b: &DenseMatrix,
    s: &DenseMatrix,
    c: &DenseMatrix,
    alpha: f64,
    delta: f64,
) -> Result<DenseMatrix, SolveError> {
    let bs = mul(b, s)?;
    let mut num = matmul(a, &bs, true, false)?.transpose();
    let mut den = mul(&matmul(&bs, &bs, true, false)?, c)?;
    if alpha != 0.0 {
        num = num.add_scaled(c, alpha)?;
        den = den.add_scaled(&mul(&matmul(c, c, false, true)?, c)?, alpha)?;
    }
    multiplicative_update(c, &num, &den, delta, Factor::C)
}

/// S <- S ⊙ (B^T A C^T) / (B^T B S C C^T + delta)
pub(super) fn mur_update_s(
    a: &DataMatrix,
    b: &DenseMatrix,
    s: &DenseMatrix,
    c: &DenseMatrix,
    delta: f64,
) -> Result<DenseMatrix, SolveError> {
    let num = matmul(b, &matmul(a, c, false, true)?, true, false)?;
    let den = mul(&mul(&matmul(b, b, true, false)?, s)?, &matmul(c, c, false, true)?)?;
    multiplicative_update(s, &num, &den, delta, Factor::S)
}

/// One sweep of the original scheme, with the multiplier estimates already
/// substituted into the denominators. Updates `B`, then `C` from the new
/// `B`, then `S` from the new `B` and `C`.
pub fn ding_step(a: &DataMatrix, model: &FactorModel, cfg: &SolverConfig) -> Result<FactorModel, SolveError> {
    model.check_against(a)?;
    let FactorModel { b, s, c } = model;
    let delta = cfg.delta;

    // B <- B ⊙ (A C^T S^T) / (B B^T A C^T S^T + delta)
    let acs = matmul(a, &mul(s, c)?, false, true)?;
    let den_b = mul(b, &matmul(b, &acs, true, false)?)?;
    let b_new = multiplicative_update(b, &acs, &den_b, delta, Factor::B)?;

    // C <- C ⊙ (S^T B'^T A) / (S^T B'^T A C^T C + delta)
    let sba = matmul(a, &mul(&b_new, s)?, true, false)?.transpose();
    let den_c = mul(&matmul(&sba, c, false, true)?, c)?;
    let c_new = multiplicative_update(c, &sba, &den_c, delta, Factor::C)?;

    let s_new = mur_update_s(a, &b_new, s, &c_new, delta)?;
    Ok(FactorModel {
        b: b_new,
        s: s_new,
        c: c_new,
    })
}

/// One multiplicative sweep on the penalized objective, `B -> C -> S`, each
/// block using the freshest available factors.
pub fn mur_step(
    a: &DataMatrix,
    model: &FactorModel,
    hp: &Hyperparams,
    cfg: &SolverConfig,
) -> Result<FactorModel, SolveError> {
    model.check_against(a)?;
    let FactorModel { b, s, c } = model;
    let b_new = mur_update_b(a, b, s, c, hp.beta, cfg.delta)?;
    let c_new = mur_update_c(a, &b_new, s, c, hp.alpha, cfg.delta)?;
    let s_new = mur_update_s(a, &b_new, s, &c_new, cfg.delta)?;
    Ok(FactorModel {
        b: b_new,
        s: s_new,
        c: c_new,
    })
}

/// Classical alternating multiplicative sweep for `1/2 ||A - BC||^2`.
pub fn ls_nmf_step(
    a: &DataMatrix,
    b: &DenseMatrix,
    c: &DenseMatrix,
    cfg: &SolverConfig,
) -> Result<(DenseMatrix, DenseMatrix), SolveError> {
    // B <- B ⊙ (A C^T) / (B C C^T + delta)
    let num_b = matmul(a, c, false, true)?;
    let den_b = mul(b, &matmul(c, c, false, true)?)?;
    let b_new = multiplicative_update(b, &num_b, &den_b, cfg.delta, Factor::B)?;
    // C <- C ⊙ (B^T A) / (B^T B C + delta)
    let num_c = matmul(a, &b_new, true, false)?.transpose();
    let den_c = mul(&matmul(&b_new, &b_new, true, false)?, c)?;
    let c_new = multiplicative_update(c, &num_c, &den_c, cfg.delta, Factor::C)?;
    Ok((b_new, c_new))
}

fn tri_kkt(a: &DataMatrix, model: &FactorModel, hp: &Hyperparams) -> Result<f64, SolveError> {
    let grads = crate::model::grad_bnmtf(a, model, hp)?;
    Ok(crate::model::kkt_from_gradients(model, &grads)?.overall)
}

fn expect(cfg: &SolverConfig, algo: Algorithm) -> Result<(), SolveError> {
    cfg.validate()?;
    if cfg.algorithm != algo {
        return Err(SolveError::WrongAlgorithm(cfg.algorithm));
    }
    Ok(())
}

/// Runs `max_outer_iters` sweeps of [`ding_step`]. The trace records the
/// penalized objective for `hp`; increases are recorded, not rejected.
pub fn ding_solve(
    a: &DataMatrix,
    hp: &Hyperparams,
    cfg: &SolverConfig,
    start: FactorModel,
) -> Result<(FactorModel, IterationTrace), SolveError> {
    expect(cfg, Algorithm::DingBnmtf)?;
    objective_bnmtf(a, &start, hp)?;
    run_sweeps(
        cfg,
        start,
        |m| Ok(objective_bnmtf(a, m, hp)?),
        |m| tri_kkt(a, m, hp),
        |m| Ok((ding_step(a, &m, cfg)?, 0)),
    )
}

/// Runs `max_outer_iters` sweeps of [`mur_step`].
pub fn mur_solve(
    a: &DataMatrix,
    hp: &Hyperparams,
    cfg: &SolverConfig,
    start: FactorModel,
) -> Result<(FactorModel, IterationTrace), SolveError> {
    expect(cfg, Algorithm::MurBnmtf)?;
    objective_bnmtf(a, &start, hp)?;
    run_sweeps(
        cfg,
        start,
        |m| Ok(objective_bnmtf(a, m, hp)?),
        |m| tri_kkt(a, m, hp),
        |m| Ok((mur_step(a, &m, hp, cfg)?, 0)),
    )
}

/// Runs `max_outer_iters` sweeps of [`ls_nmf_step`].
pub fn ls_nmf_solve(
    a: &DataMatrix,
    cfg: &SolverConfig,
    start: NmfFactors,
) -> Result<(NmfFactors, IterationTrace), SolveError> {
    expect(cfg, Algorithm::LsNmf)?;
    objective_plain(a, &start.b, &start.c)?;
    run_sweeps(
        cfg,
        start,
        |f| Ok(objective_plain(a, &f.b, &f.c)?),
        |f| super::uortho::two_factor_kkt(a, f, 0.0),
        |f| {
            let (b, c) = ls_nmf_step(a, &f.b, &f.c, cfg)?;
            Ok((NmfFactors { b, c }, 0))
        },
    )
}
