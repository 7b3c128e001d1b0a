//! Iteration schemes for the penalized tri-factorization and its two-factor
//! special cases.
//!
//! | algorithm            | update            | monotone |
//! |----------------------|-------------------|----------|
//! | `ding_bnmtf`         | multiplicative, multiplier estimates | no |
//! | `mur_bnmtf`          | multiplicative    | no       |
//! | `aur_bnmtf`          | additive, fixed offset | no  |
//! | `convergent_bnmtf`   | additive, offset escalated until the block objective does not increase | yes |
//! | `ls_nmf`             | multiplicative, `A ~ BC` | yes (classical) |
//! | `mur_uortho`         | multiplicative, `S = I`, `beta = 0` | no |
//! | `convergent_uortho`  | escalated additive, `S = I`, `beta = 0` | yes |
//!
//! Every solver records an [`IterationTrace`] whose arrays are aligned with
//! `objective`: index 0 describes the starting point, index `k` the state
//! after sweep `k`.

mod additive;
mod multiplicative;
mod uortho;

use std::time::Instant;

use clap::ValueEnum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{DataMatrix, DenseMatrix, MatrixError};
use crate::model::{Factor, FactorModel, Hyperparams, ModelError};

pub use additive::{
    aur_solve, aur_step, convergent_solve, convergent_solve_observed, safeguard, safeguard_factor, InnerLoopEvent,
    SafeguardedFactors,
};
pub use multiplicative::{ding_solve, ding_step, ls_nmf_solve, ls_nmf_step, mur_solve, mur_step};
pub use uortho::{uortho_solve, uortho_solve_observed};

/// Successive objectives closer than this fraction of the initial objective
/// count as stalled.
pub const STALL_REL_TOL: f64 = 1e-12;
/// KKT residual below which a stalled run counts as converged.
pub const KKT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Algorithm {
    DingBnmtf,
    MurBnmtf,
    AurBnmtf,
    ConvergentBnmtf,
    LsNmf,
    MurUortho,
    ConvergentUortho,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::DingBnmtf,
        Algorithm::MurBnmtf,
        Algorithm::AurBnmtf,
        Algorithm::ConvergentBnmtf,
        Algorithm::LsNmf,
        Algorithm::MurUortho,
        Algorithm::ConvergentUortho,
    ];

    /// Multiplicative schemes need strictly positive starting factors.
    pub fn is_multiplicative(self) -> bool {
        matches!(
            self,
            Algorithm::DingBnmtf | Algorithm::MurBnmtf | Algorithm::LsNmf | Algorithm::MurUortho
        )
    }

    /// Two-factor schemes keep `S` fixed at the identity.
    pub fn is_two_factor(self) -> bool {
        matches!(self, Algorithm::LsNmf | Algorithm::MurUortho | Algorithm::ConvergentUortho)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::DingBnmtf => "ding_bnmtf",
            Algorithm::MurBnmtf => "mur_bnmtf",
            Algorithm::AurBnmtf => "aur_bnmtf",
            Algorithm::ConvergentBnmtf => "convergent_bnmtf",
            Algorithm::LsNmf => "ls_nmf",
            Algorithm::MurUortho => "mur_uortho",
            Algorithm::ConvergentUortho => "convergent_uortho",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum InitKind {
    UniformRandom,
    Provided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    /// Denominator guard for multiplicative rules; base offset for additive ones.
    pub delta: f64,
    /// Floor that lets an additive update move a zero entry.
    pub sigma: f64,
    /// Growth factor of the offset inside the convergent inner loops.
    pub step: f64,
    pub max_outer_iters: usize,
    /// Trials allowed per inner loop before giving up.
    pub max_inner_iters: usize,
    pub seed: u64,
    pub init: InitKind,
    /// Stop the convergent drivers once the run has stalled at a KKT point.
    pub early_stop: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            algorithm: Algorithm::ConvergentBnmtf,
            delta: 1e-8,
            sigma: 1e-8,
            step: 10.0,
            max_outer_iters: 20,
            max_inner_iters: 60,
            seed: 0,
            init: InitKind::UniformRandom,
            early_stop: true,
        }
    }
}

impl SolverConfig {
    pub fn with_algorithm(algorithm: Algorithm) -> Self {
        SolverConfig {
            algorithm,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |msg: String| Err(SolveError::InvalidConfig(msg));
        if !self.delta.is_finite() || self.delta < 0.0 {
            return bad(format!("delta must be a finite value >= 0, got {}", self.delta));
        }
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return bad(format!("sigma must be > 0, got {}", self.sigma));
        }
        if !self.step.is_finite() || self.step <= 1.0 {
            return bad(format!("step must be > 1, got {}", self.step));
        }
        if self.delta == 0.0 && !self.algorithm.is_multiplicative() {
            return bad(format!("{} needs delta > 0", self.algorithm));
        }
        if self.max_inner_iters == 0 {
            return bad("max_inner_iters must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IterationTrace {
    /// Objective at the start (index 0) and after every completed sweep.
    pub objective: Vec<f64>,
    /// Offset escalations per sweep, ordered `[B, C, S]`. Zero for schemes
    /// without inner loops.
    pub inner_counts: Vec<[usize; 3]>,
    pub kkt_overall: Vec<f64>,
    pub wall_ms: Vec<f64>,
    pub converged_at: Option<usize>,
    /// Additive-update entries that overshot below zero and were clamped.
    pub clamped_entries: usize,
}

impl IterationTrace {
    fn start(objective: f64, kkt: f64) -> Self {
        IterationTrace {
            objective: vec![objective],
            inner_counts: vec![[0; 3]],
            kkt_overall: vec![kkt],
            wall_ms: vec![0.0],
            converged_at: None,
            clamped_entries: 0,
        }
    }

    fn push(&mut self, objective: f64, inner: [usize; 3], kkt: f64, ms: f64) {
        self.objective.push(objective);
        self.inner_counts.push(inner);
        self.kkt_overall.push(kkt);
        self.wall_ms.push(ms);
    }

    /// Completed sweeps.
    pub fn iterations(&self) -> usize {
        self.objective.len().saturating_sub(1)
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective.last().unwrap_or(&f64::NAN)
    }

    /// Increases larger than `1e-9 * objective[0]`.
    pub fn monotonicity_violations(&self) -> usize {
        let slack = self.objective.first().map_or(0.0, |j0| 1e-9 * j0.abs());
        count_violations(&self.objective, slack)
    }

    pub fn total_inner(&self) -> usize {
        self.inner_counts.iter().flatten().sum()
    }

    /// Records convergence if the last sweep stalled at a KKT point.
    fn check_converged(&mut self) -> bool {
        let n = self.objective.len();
        if n < 2 {
            return false;
        }
        let j0 = self.objective[0].abs();
        let stalled = (self.objective[n - 1] - self.objective[n - 2]).abs() <= STALL_REL_TOL * j0;
        if stalled && self.kkt_overall[n - 1] < KKT_TOL {
            self.converged_at = Some(n - 1);
            return true;
        }
        false
    }
}

/// Number of steps where `objective[k + 1] > objective[k] + slack`.
pub fn count_violations(objective: &[f64], slack: f64) -> usize {
    objective.windows(2).filter(|w| w[1] > w[0] + slack).count()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("update of {factor} produced a non-finite value at ({row}, {col})")]
    NonFinite { factor: Factor, row: usize, col: usize },
    #[error("inner loop for {factor} did not find a non-increasing step within {trials} trials at iteration {iteration}")]
    InnerLoopExhausted {
        factor: Factor,
        iteration: usize,
        trials: usize,
        trace: Box<IterationTrace>,
    },
    #[error("algorithm {0} is not handled by this entry point")]
    WrongAlgorithm(Algorithm),
    #[error("initialization `provided` requires starting factors")]
    MissingStart,
}

impl From<MatrixError> for SolveError {
    fn from(e: MatrixError) -> Self {
        SolveError::Model(ModelError::Matrix(e))
    }
}

/// Two factors of `A ~ BC`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmfFactors {
    pub b: DenseMatrix,
    pub c: DenseMatrix,
}

/// Result of [`solve`]. Two-factor algorithms report `S = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub model: FactorModel,
    pub trace: IterationTrace,
}

/// Random starting factors for an `M x N` problem with ranks `P`, `Q`.
///
/// Multiplicative algorithms get entries in `(0, 1]`, additive ones in
/// `[0, 1)`. Entries are drawn in the order `B`, `S`, `C`, row-major.
pub fn init_factors(shape: (usize, usize, usize, usize), cfg: &SolverConfig) -> FactorModel {
    let (m, n, p, q) = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let positive = cfg.algorithm.is_multiplicative();
    let mut draw = |rows, cols| {
        DenseMatrix::from_fn(rows, cols, |_, _| {
            let u: f64 = rng.gen();
            if positive {
                1.0 - u
            } else {
                u
            }
        })
    };
    let b = draw(m, p);
    let s = draw(p, q);
    let c = draw(q, n);
    FactorModel { b, s, c }
}

/// Runs the configured algorithm from `start`, or from [`init_factors`] when
/// `start` is `None`.
pub fn solve(
    a: &DataMatrix,
    hp: &Hyperparams,
    cfg: &SolverConfig,
    start: Option<FactorModel>,
) -> Result<Solution, SolveError> {
    cfg.validate()?;
    hp.validate()?;
    let (m, n) = a.shape();
    let start = match (start, cfg.init) {
        (Some(model), _) => model,
        (None, InitKind::Provided) => return Err(SolveError::MissingStart),
        (None, InitKind::UniformRandom) => init_factors((m, n, hp.p, hp.q), cfg),
    };
    let (model, trace) = match cfg.algorithm {
        Algorithm::DingBnmtf => ding_solve(a, hp, cfg, start)?,
        Algorithm::MurBnmtf => mur_solve(a, hp, cfg, start)?,
        Algorithm::AurBnmtf => aur_solve(a, hp, cfg, start)?,
        Algorithm::ConvergentBnmtf => convergent_solve(a, hp, cfg, start)?,
        Algorithm::LsNmf | Algorithm::MurUortho | Algorithm::ConvergentUortho => {
            if hp.p != hp.q {
                return Err(SolveError::InvalidConfig(format!(
                    "{} needs p == q, got p = {}, q = {}",
                    cfg.algorithm, hp.p, hp.q
                )));
            }
            let factors = NmfFactors { b: start.b, c: start.c };
            let (factors, trace) = if cfg.algorithm == Algorithm::LsNmf {
                ls_nmf_solve(a, cfg, factors)?
            } else {
                uortho_solve(a, hp.alpha, cfg, factors)?
            };
            let s = DenseMatrix::identity(hp.q);
            (FactorModel::new(factors.b, s, factors.c)?, trace)
        }
    };
    Ok(Solution { model, trace })
}

fn elapsed_ms(started: Instant) -> f64 {
    started.elapsed().as_secs_f64() * 1e3
}

/// Fixed number of sweeps with no acceptance test; used by every
/// non-convergent scheme.
fn run_sweeps<M>(
    cfg: &SolverConfig,
    start: M,
    objective: impl Fn(&M) -> Result<f64, SolveError>,
    kkt: impl Fn(&M) -> Result<f64, SolveError>,
    mut sweep: impl FnMut(M) -> Result<(M, usize), SolveError>,
) -> Result<(M, IterationTrace), SolveError> {
    let mut trace = IterationTrace::start(objective(&start)?, kkt(&start)?);
    let mut current = start;
    for _ in 0..cfg.max_outer_iters {
        let started = Instant::now();
        let (next, clamped) = sweep(current)?;
        let ms = elapsed_ms(started);
        current = next;
        trace.clamped_entries += clamped;
        trace.push(objective(&current)?, [0; 3], kkt(&current)?, ms);
    }
    Ok((current, trace))
}

/// Non-finite check shared by all update rules.
fn ensure_finite(m: &DenseMatrix, factor: Factor) -> Result<(), SolveError> {
    match m.first_non_finite() {
        Some((row, col)) => Err(SolveError::NonFinite { factor, row, col }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn violation_counter_on_injected_trace() {
        assert_eq!(count_violations(&[3.0, 2.0, 2.5, 1.0], 0.0), 1);
        let trace = IterationTrace {
            objective: vec![3.0, 2.0, 2.5, 1.0],
            ..Default::default()
        };
        assert_eq!(trace.monotonicity_violations(), 1);
        assert_eq!(count_violations(&[1.0], 0.0), 0);
        assert_eq!(count_violations(&[1.0, 1.0 + 1e-12], 1e-9), 0);
    }

    #[test]
    fn default_config_values() {
        let cfg = SolverConfig::default();
        assert_eq!(cfg.delta, 1e-8);
        assert_eq!(cfg.sigma, 1e-8);
        assert_eq!(cfg.step, 10.0);
        assert_eq!(cfg.max_outer_iters, 20);
        assert_eq!(cfg.max_inner_iters, 60);
        cfg.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let base = SolverConfig::default();
        assert!(SolverConfig { sigma: 0.0, ..base.clone() }.validate().is_err());
        assert!(SolverConfig { step: 1.0, ..base.clone() }.validate().is_err());
        assert!(SolverConfig { delta: -1.0, ..base.clone() }.validate().is_err());
        assert!(SolverConfig { delta: f64::NAN, ..base.clone() }.validate().is_err());
        assert!(SolverConfig { max_inner_iters: 0, ..base.clone() }.validate().is_err());
        assert!(SolverConfig { max_outer_iters: 0, ..base }.validate().is_ok());
    }

    #[test]
    fn init_is_deterministic_and_ranged() {
        let mult = SolverConfig {
            seed: 42,
            ..SolverConfig::with_algorithm(Algorithm::MurBnmtf)
        };
        let x = init_factors((6, 7, 3, 2), &mult);
        assert_eq!(x, init_factors((6, 7, 3, 2), &mult));
        assert_eq!(x.dims(), (6, 7, 3, 2));
        for m in [&x.b, &x.s, &x.c] {
            assert!(m.min_value() > 0.0 && m.max_value() <= 1.0);
        }

        let add = SolverConfig {
            seed: 42,
            ..SolverConfig::with_algorithm(Algorithm::ConvergentBnmtf)
        };
        let y = init_factors((6, 7, 3, 2), &add);
        assert_eq!((y.b.shape(), y.s.shape(), y.c.shape()), ((6, 3), (3, 2), (2, 7)));
        for m in [&y.b, &y.s, &y.c] {
            assert!(m.min_value() >= 0.0 && m.max_value() < 1.0);
        }
        assert_ne!(x, init_factors((6, 7, 3, 2), &SolverConfig { seed: 43, ..mult }));
    }

    #[test]
    fn algorithm_names_round_trip() {
        for algo in Algorithm::ALL {
            let parsed = Algorithm::from_str(algo.name(), false).unwrap();
            assert_eq!(parsed, algo);
            let json = serde_json::to_string(&algo).unwrap();
            assert_eq!(json, format!("\"{}\"", algo.name()));
        }
    }
}
