//! Additive updates with zero-escape safeguards, and the driver that
//! escalates the damping offset until each block update does not increase
//! the objective.

use std::time::Instant;

use crate::matrix::{matmul, mul, DataMatrix, DenseMatrix, MatrixError};
use crate::model::{
    grad_b, grad_c, grad_s, kkt_from_gradients, objective_bnmtf, objective_of, Factor, FactorModel, Gradients,
    Hyperparams,
};

use super::{elapsed_ms, ensure_finite, run_sweeps, Algorithm, IterationTrace, SolveError, SolverConfig};

/// Factors with zero entries lifted to `sigma` wherever the gradient is
/// negative.
#[derive(Debug, Clone, PartialEq)]
pub struct SafeguardedFactors {
    pub b: DenseMatrix,
    pub c: DenseMatrix,
    pub s: DenseMatrix,
}

/// Entrywise: `x` where `grad >= 0`, else `max(x, sigma)`.
pub fn safeguard_factor(x: &DenseMatrix, grad: &DenseMatrix, sigma: f64) -> Result<DenseMatrix, MatrixError> {
    x.zip_map(grad, "safeguard", |x, g| if g >= 0.0 { x } else { x.max(sigma) })
}

/// Applies [`safeguard_factor`] to each factor with its own gradient. The
/// caller supplies gradients evaluated at the staged points the sweep uses.
pub fn safeguard(model: &FactorModel, grads: &Gradients, sigma: f64) -> Result<SafeguardedFactors, MatrixError> {
    Ok(SafeguardedFactors {
        b: safeguard_factor(&model.b, &grads.b, sigma)?,
        c: safeguard_factor(&model.c, &grads.c, sigma)?,
        s: safeguard_factor(&model.s, &grads.s, sigma)?,
    })
}

/// One block of an additive sweep with everything except the offset fixed:
/// `x - x_bar ⊙ grad / (denom + delta)`.
pub(super) struct AdditiveBlock {
    factor: Factor,
    current: DenseMatrix,
    bar: DenseMatrix,
    grad: DenseMatrix,
    denom: DenseMatrix,
}

impl AdditiveBlock {
    /// Denominator `B̄ S C C^T S^T + beta B̄ B̄^T B̄`, gradient at `(B, S, C)`.
    pub(super) fn for_b(
        a: &DataMatrix,
        b: &DenseMatrix,
        s: &DenseMatrix,
        c: &DenseMatrix,
        beta: f64,
        sigma: f64,
    ) -> Result<Self, MatrixError> {
        let grad = grad_b(a, b, s, c, beta)?;
        let bar = safeguard_factor(b, &grad, sigma)?;
        let sc = mul(s, c)?;
        let mut denom = mul(&bar, &matmul(&sc, &sc, false, true)?)?;
        if beta != 0.0 {
            denom = denom.add_scaled(&mul(&bar, &matmul(&bar, &bar, true, false)?)?, beta)?;
        }
        Ok(AdditiveBlock {
            factor: Factor::B,
            current: b.clone(),
            bar,
            grad,
            denom,
        })
    }

    /// Denominator `S^T B^T B S C̄ + alpha C̄ C̄^T C̄`, gradient at `(B, S, C)`.
    pub(super) fn for_c(
        a: &DataMatrix,
        b: &DenseMatrix,
        s: &DenseMatrix,
        c: &DenseMatrix,
        alpha: f64,
        sigma: f64,
    ) -> Result<Self, MatrixError> {
        let grad = grad_c(a, b, s, c, alpha)?;
        let bar = safeguard_factor(c, &grad, sigma)?;
        let bs = mul(b, s)?;
        let mut denom = mul(&matmul(&bs, &bs, true, false)?, &bar)?;
        if alpha != 0.0 {
            denom = denom.add_scaled(&mul(&matmul(&bar, &bar, false, true)?, &bar)?, alpha)?;
        }
        Ok(AdditiveBlock {
            factor: Factor::C,
            current: c.clone(),
            bar,
            grad,
            denom,
        })
    }

    /// Denominator `B^T B S̄ C C^T`, gradient at `(B, S, C)`.
    pub(super) fn for_s(
        a: &DataMatrix,
        b: &DenseMatrix,
        s: &DenseMatrix,
        c: &DenseMatrix,
        sigma: f64,
    ) -> Result<Self, MatrixError> {
        let grad = grad_s(a, b, s, c)?;
        let bar = safeguard_factor(s, &grad, sigma)?;
        let denom = mul(&mul(&matmul(b, b, true, false)?, &bar)?, &matmul(c, c, false, true)?)?;
        Ok(AdditiveBlock {
            factor: Factor::S,
            current: s.clone(),
            bar,
            grad,
            denom,
        })
    }

    /// Updated factor and the number of entries clamped at zero.
    pub(super) fn apply(&self, delta: f64) -> Result<(DenseMatrix, usize), SolveError> {
        let mut clamped = 0;
        let values = self
            .current
            .values()
            .iter()
            .zip(self.bar.values())
            .zip(self.grad.values())
            .zip(self.denom.values())
            .map(|(((&x, &bar), &g), &d)| {
                let push = bar * g;
                if push == 0.0 {
                    return x;
                }
                let next = x - push / (d + delta);
                if next < 0.0 {
                    clamped += 1;
                    0.0
                } else {
                    next
                }
            })
            .collect();
        let out = DenseMatrix::from_vec(self.current.rows(), self.current.cols(), values)?;
        ensure_finite(&out, self.factor)?;
        Ok((out, clamped))
    }
}

/// One additive sweep `B -> C -> S` with fixed offsets. Each block's gradient
/// and safeguard use the freshest factors: `grad_B` at `(B, S, C)`, `grad_C`
/// at `(B', S, C)`, `grad_S` at `(B', S, C')`.
pub fn aur_step(
    a: &DataMatrix,
    model: &FactorModel,
    hp: &Hyperparams,
    cfg: &SolverConfig,
    delta_b: f64,
    delta_c: f64,
    delta_s: f64,
) -> Result<FactorModel, SolveError> {
    Ok(aur_sweep(a, model, hp, cfg, [delta_b, delta_c, delta_s])?.0)
}

fn aur_sweep(
    a: &DataMatrix,
    model: &FactorModel,
    hp: &Hyperparams,
    cfg: &SolverConfig,
    deltas: [f64; 3],
) -> Result<(FactorModel, usize), SolveError> {
    model.check_against(a)?;
    let FactorModel { b, s, c } = model;
    let (b_new, kb) = AdditiveBlock::for_b(a, b, s, c, hp.beta, cfg.sigma)?.apply(deltas[0])?;
    let (c_new, kc) = AdditiveBlock::for_c(a, &b_new, s, c, hp.alpha, cfg.sigma)?.apply(deltas[1])?;
    let (s_new, ks) = AdditiveBlock::for_s(a, &b_new, s, &c_new, cfg.sigma)?.apply(deltas[2])?;
    Ok((
        FactorModel {
            b: b_new,
            s: s_new,
            c: c_new,
        },
        kb + kc + ks,
    ))
}

/// Runs `max_outer_iters` additive sweeps with every offset fixed at
/// `cfg.delta`. Nothing prevents the objective from increasing.
pub fn aur_solve(
    a: &DataMatrix,
    hp: &Hyperparams,
    cfg: &SolverConfig,
    start: FactorModel,
) -> Result<(FactorModel, IterationTrace), SolveError> {
    cfg.validate()?;
    if cfg.algorithm != Algorithm::AurBnmtf {
        return Err(SolveError::WrongAlgorithm(cfg.algorithm));
    }
    objective_bnmtf(a, &start, hp)?;
    let delta = cfg.delta;
    run_sweeps(
        cfg,
        start,
        |m| Ok(objective_bnmtf(a, m, hp)?),
        |m| {
            let grads = crate::model::grad_bnmtf(a, m, hp)?;
            Ok(kkt_from_gradients(m, &grads)?.overall)
        },
        |m| aur_sweep(a, &m, hp, cfg, [delta; 3]),
    )
}

/// Reported once per accepted block update of the convergent drivers.
#[derive(Debug, Clone, Copy)]
pub struct InnerLoopEvent<'a> {
    /// Outer iteration this block belongs to, starting at 1.
    pub iteration: usize,
    pub factor: Factor,
    /// Rejected trials before the accepted one.
    pub escalations: usize,
    /// Offset used by the accepted trial.
    pub delta_used: f64,
    /// Objective before the block update.
    pub objective_before: f64,
    /// Objective after the accepted update, `<= objective_before`.
    pub objective_after: f64,
    /// All factors right after the accepted update.
    pub state: &'a FactorModel,
}

struct Accepted {
    matrix: DenseMatrix,
    escalations: usize,
    delta_used: f64,
    objective: f64,
    clamped: usize,
}

/// Repeat the block update with offsets `delta, delta*step, ...` until the
/// objective does not exceed `before`. `None` when every trial failed.
fn escalate(
    block: &AdditiveBlock,
    cfg: &SolverConfig,
    before: f64,
    eval: impl Fn(&DenseMatrix) -> Result<f64, SolveError>,
) -> Result<Option<Accepted>, SolveError> {
    let mut delta = cfg.delta;
    for trial in 0..cfg.max_inner_iters {
        let (candidate, clamped) = block.apply(delta)?;
        let used = delta;
        delta *= cfg.step;
        let after = eval(&candidate)?;
        if after <= before {
            return Ok(Some(Accepted {
                matrix: candidate,
                escalations: trial,
                delta_used: used,
                objective: after,
                clamped,
            }));
        }
    }
    Ok(None)
}

/// Shared by the tri-factor and uni-orthogonal convergent drivers. With
/// `update_s == false` the `S` block is skipped entirely.
#[allow(clippy::too_many_arguments)]
pub(super) fn convergent_core(
    a: &DataMatrix,
    alpha: f64,
    beta: f64,
    update_s: bool,
    cfg: &SolverConfig,
    start: FactorModel,
    kkt: impl Fn(&FactorModel) -> Result<f64, SolveError>,
    observer: &mut dyn FnMut(&InnerLoopEvent),
) -> Result<(FactorModel, IterationTrace), SolveError> {
    let mut model = start;
    let mut current = objective_of(a, &model.b, &model.s, &model.c, alpha, beta)?;
    let mut trace = IterationTrace::start(current, kkt(&model)?);

    for k in 0..cfg.max_outer_iters {
        let started = Instant::now();
        let iteration = k + 1;
        let mut inner = [0usize; 3];

        let blocks: &[Factor] = if update_s {
            &[Factor::B, Factor::C, Factor::S]
        } else {
            &[Factor::B, Factor::C]
        };
        for (slot, &factor) in blocks.iter().enumerate() {
            let FactorModel { b, s, c } = &model;
            let block = match factor {
                Factor::B => AdditiveBlock::for_b(a, b, s, c, beta, cfg.sigma)?,
                Factor::C => AdditiveBlock::for_c(a, b, s, c, alpha, cfg.sigma)?,
                Factor::S => AdditiveBlock::for_s(a, b, s, c, cfg.sigma)?,
            };
            let eval = |candidate: &DenseMatrix| -> Result<f64, SolveError> {
                let j = match factor {
                    Factor::B => objective_of(a, candidate, s, c, alpha, beta)?,
                    Factor::C => objective_of(a, b, s, candidate, alpha, beta)?,
                    Factor::S => objective_of(a, b, candidate, c, alpha, beta)?,
                };
                Ok(j)
            };
            let Some(accepted) = escalate(&block, cfg, current, eval)? else {
                return Err(SolveError::InnerLoopExhausted {
                    factor,
                    iteration,
                    trials: cfg.max_inner_iters,
                    trace: Box::new(trace),
                });
            };
            *model.factor_mut(factor) = accepted.matrix;
            inner[slot] = accepted.escalations;
            trace.clamped_entries += accepted.clamped;
            observer(&InnerLoopEvent {
                iteration,
                factor,
                escalations: accepted.escalations,
                delta_used: accepted.delta_used,
                objective_before: current,
                objective_after: accepted.objective,
                state: &model,
            });
            current = accepted.objective;
        }
        // trace slots are [B, C, S]; the S count stays 0 when S is frozen
        let ms = elapsed_ms(started);
        trace.push(current, inner, kkt(&model)?, ms);
        if cfg.early_stop && trace.check_converged() {
            break;
        }
    }
    Ok((model, trace))
}

/// Convergent driver for the penalized tri-factorization. Every block update
/// is retried with a growing offset until the objective does not increase, so
/// `trace.objective` is nonincreasing.
pub fn convergent_solve(
    a: &DataMatrix,
    hp: &Hyperparams,
    cfg: &SolverConfig,
    start: FactorModel,
) -> Result<(FactorModel, IterationTrace), SolveError> {
    convergent_solve_observed(a, hp, cfg, start, &mut |_| {})
}

/// [`convergent_solve`] with a callback after every accepted block update.
pub fn convergent_solve_observed(
    a: &DataMatrix,
    hp: &Hyperparams,
    cfg: &SolverConfig,
    start: FactorModel,
    observer: &mut dyn FnMut(&InnerLoopEvent),
) -> Result<(FactorModel, IterationTrace), SolveError> {
    cfg.validate()?;
    if cfg.algorithm != Algorithm::ConvergentBnmtf {
        return Err(SolveError::WrongAlgorithm(cfg.algorithm));
    }
    objective_bnmtf(a, &start, hp)?;
    start.check_feasible()?;
    convergent_core(
        a,
        hp.alpha,
        hp.beta,
        true,
        cfg,
        start,
        |m| {
            let grads = crate::model::grad_bnmtf(a, m, hp)?;
            Ok(kkt_from_gradients(m, &grads)?.overall)
        },
        observer,
    )
}
