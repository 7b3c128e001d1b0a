//! Uni-orthogonal two-factor schemes: `S` fixed at the identity, only the
//! row-orthogonality penalty on `C` kept.

use crate::matrix::{DataMatrix, DenseMatrix};
use crate::model::{grad_b, grad_c, kkt_parts, objective_of, FactorModel};

use super::additive::{convergent_core, InnerLoopEvent};
use super::multiplicative::{mur_update_b, mur_update_c};
use super::{run_sweeps, Algorithm, IterationTrace, NmfFactors, SolveError, SolverConfig};

fn embed(f: NmfFactors) -> Result<FactorModel, SolveError> {
    let s = DenseMatrix::identity(f.b.cols());
    Ok(FactorModel::new(f.b, s, f.c)?)
}

fn objective(a: &DataMatrix, f: &NmfFactors, alpha: f64) -> Result<f64, SolveError> {
    let s = DenseMatrix::identity(f.b.cols());
    Ok(objective_of(a, &f.b, &s, &f.c, alpha, 0.0)?)
}

/// Largest KKT violation of `1/2 ||A - BC||^2 + alpha/2 ||CC^T - I||^2`.
pub(super) fn two_factor_kkt(a: &DataMatrix, f: &NmfFactors, alpha: f64) -> Result<f64, SolveError> {
    let s = DenseMatrix::identity(f.b.cols());
    let gb = grad_b(a, &f.b, &s, &f.c, 0.0)?;
    let gc = grad_c(a, &f.b, &s, &f.c, alpha)?;
    let (nb, cb) = kkt_parts(&f.b, &gb)?;
    let (nc, cc) = kkt_parts(&f.c, &gc)?;
    Ok(nb.max(cb).max(nc).max(cc))
}

/// Runs `mur_uortho` or `convergent_uortho` on `A ~ BC`.
pub fn uortho_solve(
    a: &DataMatrix,
    alpha: f64,
    cfg: &SolverConfig,
    start: NmfFactors,
) -> Result<(NmfFactors, IterationTrace), SolveError> {
    uortho_solve_observed(a, alpha, cfg, start, &mut |_| {})
}

/// [`uortho_solve`] with a callback after every accepted block update. The
/// multiplicative variant has no inner loop and never calls it.
pub fn uortho_solve_observed(
    a: &DataMatrix,
    alpha: f64,
    cfg: &SolverConfig,
    start: NmfFactors,
    observer: &mut dyn FnMut(&InnerLoopEvent),
) -> Result<(NmfFactors, IterationTrace), SolveError> {
    cfg.validate()?;
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(SolveError::InvalidConfig(format!("alpha must be a finite value >= 0, got {alpha}")));
    }
    if start.b.cols() != start.c.rows() {
        return Err(SolveError::InvalidConfig(format!(
            "inner dimensions differ: B has {} columns, C has {} rows",
            start.b.cols(),
            start.c.rows()
        )));
    }
    objective(a, &start, alpha)?;
    match cfg.algorithm {
        Algorithm::MurUortho => run_sweeps(
            cfg,
            start,
            |f| objective(a, f, alpha),
            |f| two_factor_kkt(a, f, alpha),
            |f| {
                let s = DenseMatrix::identity(f.b.cols());
                let b = mur_update_b(a, &f.b, &s, &f.c, 0.0, cfg.delta)?;
                let c = mur_update_c(a, &b, &s, &f.c, alpha, cfg.delta)?;
                Ok((NmfFactors { b, c }, 0))
            },
        ),
        Algorithm::ConvergentUortho => {
            let model = embed(start)?;
            model.check_feasible()?;
            let (model, trace) = convergent_core(
                a,
                alpha,
                0.0,
                false,
                cfg,
                model,
                |m| {
                    let f = NmfFactors {
                        b: m.b.clone(),
                        c: m.c.clone(),
                    };
                    two_factor_kkt(a, &f, alpha)
                },
                observer,
            )?;
            Ok((NmfFactors { b: model.b, c: model.c }, trace))
        }
        other => Err(SolveError::WrongAlgorithm(other)),
    }
}
