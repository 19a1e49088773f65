//! Solver ladder: dual ascent, dual decomposition, method of multipliers,
//! ADMM, consensus ADMM, and ALADIN.
//!
//! Multiplier sign conventions differ between the two families and are used
//! consistently within each:
//!
//! - first-order solvers use `L(x, y) = f(x) + y^T (Ax - b)`, so stationarity
//!   reads `grad f + A^T y = 0`;
//! - the SQP machinery uses `L(x, lambda) = f(x) - lambda^T c(x)`, so its
//!   KKT residual reads `grad f - A(x)^T lambda`.

pub mod aladin;
pub mod first_order;
pub mod sqp;

pub use aladin::{
    coordination_step, dual_update, hessian_approx, local_step, run_aladin, AladinConfig,
    CoordinationBlock, CoordinationQp, HessianMode, LocalStepResult,
};
pub use first_order::{
    admm_two_block, consensus_admm, dual_ascent, dual_decomposition, duality_gap_estimate,
    method_of_multipliers, DualityGapEstimate,
};
pub use sqp::{
    detect_active_set, kkt_residual, sqp_solve, sqp_step, ActiveSet, SqpConfig, SqpProblem,
    SqpSolution, SqpStatus,
};

use crate::calculus::CalculusError;
use crate::harness::ExecutionMode;
use crate::kkt::{self, KktError};
use crate::problem::{ConvergenceTrace, IterateState, ProblemError};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Shared configuration of the first-order solvers.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Augmented-Lagrangian penalty weight.
    pub rho: f64,
    /// Dual ascent step size.
    pub alpha: f64,
    pub max_iter: usize,
    /// Convergence threshold on the coupling residual L2 norm.
    pub tol_primal: f64,
    /// Convergence threshold on the relative primal step norm.
    pub tol_dual: f64,
    /// Gradient-norm tolerance of the inner minimizations.
    pub inner_tol: f64,
    /// Seed for any randomized initialization.
    pub seed: u64,
    /// How per-block subproblems are executed.
    pub mode: ExecutionMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            alpha: 0.1,
            max_iter: 1000,
            tol_primal: 1e-8,
            tol_dual: 1e-8,
            inner_tol: 1e-10,
            seed: 0,
            mode: ExecutionMode::Sequential,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        if self.rho < 0.0 || !self.rho.is_finite() {
            return Err(SolveError::InvalidConfig("rho must be nonnegative".into()));
        }
        if self.alpha <= 0.0 {
            return Err(SolveError::InvalidConfig("alpha must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(SolveError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if self.tol_primal < 0.0 || self.tol_dual < 0.0 {
            return Err(SolveError::InvalidConfig("tolerances must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Termination state of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Diverged,
    Oscillating,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolveStatus::Converged => write!(f, "converged"),
            SolveStatus::MaxIter => write!(f, "max-iter"),
            SolveStatus::Diverged => write!(f, "diverged"),
            SolveStatus::Oscillating => write!(f, "oscillating"),
        }
    }
}

/// Final iterate, per-iteration trace, and termination status of one solve.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub state: IterateState,
    pub trace: ConvergenceTrace,
    pub status: SolveStatus,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Problem(#[from] ProblemError),

    #[error(transparent)]
    Calculus(#[from] CalculusError),

    #[error(transparent)]
    Kkt(#[from] KktError),

    #[error("block {block} failed at iteration {iteration}: {message}")]
    BlockFailure { block: usize, iteration: usize, message: String },

    #[error("linearized coordination constraints are infeasible at iteration {iteration}")]
    CoordinationInfeasible { iteration: usize },

    #[error("block {block}: local constraints are not supported by {solver}")]
    UnsupportedLocalConstraints { block: usize, solver: &'static str },

    #[error("problem is not in consensus form: {0}")]
    NotConsensusForm(String),

    #[error("SQP did not converge in {iterations} iterations (KKT residual {residual:.3e})")]
    SqpNonConvergence { iterations: usize, residual: f64 },

    #[error("inner minimization failed: {0}")]
    Inner(InnerFailure),
}

/// Why a damped-Newton inner minimization stopped without a minimizer.
#[derive(Debug, Error)]
pub enum InnerFailure {
    #[error("iterate norm {norm:.3e} exceeded the divergence radius {radius:.3e}; objective appears unbounded below")]
    Unbounded { norm: f64, radius: f64 },

    #[error("line search found no decrease (gradient norm {grad_norm:.3e})")]
    LineSearch { grad_norm: f64 },

    #[error("inner Newton exhausted {max_iter} iterations (gradient norm {grad_norm:.3e})")]
    MaxIter { max_iter: usize, grad_norm: f64 },

    #[error("evaluation failed during inner minimization: {0}")]
    Eval(String),
}

/// Iterate-norm bound beyond which an inner minimization is declared
/// unbounded below.
pub(crate) const DIVERGENCE_RADIUS: f64 = 1e8;

/// Proximal weight of the minimum-norm tie-break used when the inner Hessian
/// is positive semidefinite but singular.
pub(crate) const MIN_NORM_PROX: f64 = 1e-10;

pub(crate) const INNER_MAX_ITER: usize = 200;

pub(crate) type InnerEval<'a, T> = Box<dyn Fn(&DVector<f64>) -> Result<T, SolveError> + 'a>;

/// A smooth unconstrained objective handed to the inner Newton loop.
pub(crate) struct InnerProblem<'a> {
    pub f: InnerEval<'a, f64>,
    pub grad: InnerEval<'a, DVector<f64>>,
    pub hess: InnerEval<'a, DMatrix<f64>>,
}

/// Damped Newton with backtracking on a smooth objective.
///
/// The model Hessian is formed from the eigendecomposition of the supplied
/// Hessian: adequate curvature is kept, indefinite or near-singular
/// directions are clipped to a relative floor. With `min_norm_tie_break`
/// set, a Hessian that is convex up to noise but singular activates a tiny
/// proximal term centered at the origin, so a flat solution set resolves
/// toward its minimum-norm point; solvers that must *fail* on non-unique
/// minimizers leave it off.
///
/// Convergence is measured on the gradient of the *original* objective;
/// when the proximal tie-break is active its intentional bias widens the
/// stopping tolerance accordingly. Near the solution, objective differences
/// fall below representable precision, so a step that reduces the gradient
/// norm is accepted even when the Armijo comparison saturates.
pub(crate) fn damped_newton(
    problem: &InnerProblem<'_>,
    x0: DVector<f64>,
    tol: f64,
    min_norm_tie_break: bool,
) -> Result<DVector<f64>, SolveError> {
    let mut x = x0;
    let mut prox = 0.0_f64;
    let eval = |x: &DVector<f64>, prox: f64| -> Result<f64, SolveError> {
        Ok((problem.f)(x)? + 0.5 * prox * x.norm_squared())
    };
    let grad_full = |x: &DVector<f64>, prox: f64| -> Result<DVector<f64>, SolveError> {
        let mut g = (problem.grad)(x)?;
        if prox > 0.0 {
            g += x * prox;
        }
        Ok(g)
    };
    let stop_tol =
        |x: &DVector<f64>, prox: f64| -> f64 { tol.max(2.0 * prox * (1.0 + x.norm())) };

    for _ in 0..INNER_MAX_ITER {
        let g_orig = (problem.grad)(&x)?;
        if g_orig.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::Inner(InnerFailure::Eval("gradient is not finite".into())));
        }
        let gnorm_orig = g_orig.norm();
        if gnorm_orig <= stop_tol(&x, prox) {
            return Ok(x);
        }

        let mut h = (problem.hess)(&x)?;
        if h.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::Inner(InnerFailure::Eval("Hessian is not finite".into())));
        }
        h = (&h + h.transpose()) * 0.5;
        let eigen = h.clone().symmetric_eigen();
        let scale = 1.0 + eigen.eigenvalues.abs().max();
        let min_eig = eigen.eigenvalues.min();
        let model = if min_eig > 1e-9 * scale {
            h
        } else if min_norm_tie_break && min_eig > -1e-6 * scale {
            // Convex up to noise but singular: minimum-norm tie-break. Flat
            // directions get exactly the proximal curvature.
            prox = prox.max(MIN_NORM_PROX);
            let clipped = DVector::from_iterator(
                eigen.eigenvalues.len(),
                eigen.eigenvalues.iter().map(|&l| l.max(prox)),
            );
            &eigen.eigenvectors
                * DMatrix::from_diagonal(&clipped)
                * eigen.eigenvectors.transpose()
        } else {
            let floor = (1e-6 * scale).max(1e-8);
            let clipped = DVector::from_iterator(
                eigen.eigenvalues.len(),
                eigen.eigenvalues.iter().map(|&l| l.max(floor)),
            );
            &eigen.eigenvectors
                * DMatrix::from_diagonal(&clipped)
                * eigen.eigenvectors.transpose()
        };
        let model = (&model + model.transpose()) * 0.5;

        let g = if prox > 0.0 { &g_orig + &x * prox } else { g_orig.clone() };
        let gnorm = g.norm();
        let chol = match model.clone().cholesky() {
            Some(c) => c,
            None => kkt::regularize_spd(&model, (1e-6 * scale).max(1e-8))
                .cholesky()
                .ok_or(SolveError::Inner(InnerFailure::Eval(
                    "could not form a positive-definite model".into(),
                )))?,
        };
        let step = chol.solve(&(-&g));

        let phi0 = eval(&x, prox)?;
        if !phi0.is_finite() {
            return Err(SolveError::Inner(InnerFailure::Eval(
                "objective is not finite at the current iterate".into(),
            )));
        }
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = None;
        for halving in 0..60 {
            let xt = &x + &step * t;
            let phit = eval(&xt, prox)?;
            if phit.is_finite() && phit <= phi0 + 1e-4 * t * slope {
                accepted = Some(xt);
                break;
            }
            if halving == 0 {
                // Objective differences can saturate near the optimum; a
                // full step that strictly shrinks the gradient is progress.
                let gt = grad_full(&xt, prox)?;
                if gt.iter().all(|v| v.is_finite()) && gt.norm() <= 0.9 * gnorm {
                    accepted = Some(xt);
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some(xt) => x = xt,
            None => {
                if gnorm_orig <= 10.0 * stop_tol(&x, prox) {
                    return Ok(x);
                }
                return Err(SolveError::Inner(InnerFailure::LineSearch { grad_norm: gnorm }));
            }
        }
        let norm = x.norm();
        if norm > DIVERGENCE_RADIUS {
            return Err(SolveError::Inner(InnerFailure::Unbounded {
                norm,
                radius: DIVERGENCE_RADIUS,
            }));
        }
    }

    let g = (problem.grad)(&x)?;
    let gnorm_orig = g.norm();
    if gnorm_orig <= 10.0 * stop_tol(&x, prox) {
        Ok(x)
    } else {
        Err(SolveError::Inner(InnerFailure::MaxIter {
            max_iter: INNER_MAX_ITER,
            grad_norm: gnorm_orig,
        }))
    }
}
