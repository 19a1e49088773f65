//! First-order distributed solvers: dual ascent, dual decomposition, method
//! of multipliers, two-block ADMM, and consensus ADMM.
//!
//! All solvers here require blocks without local constraints (the local
//! feasible set is the whole space); constrained blocks belong to the ALADIN
//! path. Convergence is declared when the coupling residual drops below
//! `tol_primal` and the primal step satisfies
//! `||x_next - x|| <= tol_dual * (1 + ||x||)`.
//!
//! Trace columns: the `objective` field records the dual value
//! `L(x^{k+1}, lambda^k)` for the dual-ascent family (a lower bound on the
//! optimum) and the primal objective `sum f_i` for the augmented-Lagrangian
//! family; `dual_res` always records the stationarity violation
//! `||grad f(x) + A^T lambda||`.

use super::{damped_newton, InnerProblem, SolveError, SolveResult, SolveStatus, SolverConfig};
use crate::calculus::{self, ScalarField};
use crate::harness::map_blocks;
use crate::problem::{
    stack_blocks, unstack_blocks, ConvergenceTrace, IterateState, LocalBlock, SeparableProblem,
    TraceRecord,
};
use nalgebra::{DMatrix, DVector};
use std::time::Instant;

/// Iterations over which a non-decreasing coupling residual counts as
/// oscillation.
const OSCILLATION_WINDOW: usize = 20;

fn ensure_unconstrained(p: &SeparableProblem, solver: &'static str) -> Result<(), SolveError> {
    for (i, blk) in p.blocks().iter().enumerate() {
        if !blk.is_unconstrained() {
            return Err(SolveError::UnsupportedLocalConstraints { block: i, solver });
        }
    }
    Ok(())
}

/// Stacked coupling matrix `[A_1 ... A_R]`.
fn stacked_coupling(p: &SeparableProblem) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(p.coupling_rows(), p.total_dim());
    let mut offset = 0;
    for blk in p.blocks() {
        a.view_mut((0, offset), (p.coupling_rows(), blk.dim())).copy_from(blk.coupling());
        offset += blk.dim();
    }
    a
}

/// `||grad f(x) + A^T lambda||` over all blocks, in block order.
fn stationarity_norm(
    p: &SeparableProblem,
    x: &[DVector<f64>],
    lambda: &DVector<f64>,
) -> Result<f64, SolveError> {
    let mut acc = 0.0;
    for (blk, xi) in p.blocks().iter().zip(x) {
        let g = blk.objective_gradient(xi)? + blk.coupling().transpose() * lambda;
        acc += g.norm_squared();
    }
    Ok(acc.sqrt())
}

fn block_dims(p: &SeparableProblem) -> Vec<usize> {
    p.blocks().iter().map(|b| b.dim()).collect()
}

/// Minimizes `f_i(x) + glam^T x` for one block (the block share of the
/// Lagrangian, constants dropped).
fn block_lagrangian_argmin(
    blk: &LocalBlock,
    glam: &DVector<f64>,
    warm: DVector<f64>,
    inner_tol: f64,
) -> Result<DVector<f64>, SolveError> {
    let field = blk.objective().clone();
    let inner = InnerProblem {
        f: Box::new({
            let field = field.clone();
            let glam = glam.clone();
            move |x| Ok(field.eval(x) + glam.dot(x))
        }),
        grad: Box::new({
            let glam = glam.clone();
            move |x| Ok(blk.objective_gradient(x)? + &glam)
        }),
        hess: Box::new(move |x| {
            Ok(calculus::fd_hessian(&field, x, calculus::default_hessian_step())?)
        }),
    };
    damped_newton(&inner, warm, inner_tol, false)
}

struct LoopRecorder {
    start: Instant,
    trace: ConvergenceTrace,
}

impl LoopRecorder {
    fn new() -> Self {
        Self { start: Instant::now(), trace: ConvergenceTrace::new() }
    }

    fn push(&mut self, iter: usize, objective: f64, primal: f64, dual: f64, step: f64) {
        self.trace.push(TraceRecord {
            iter,
            objective,
            primal_res: primal,
            dual_res: dual,
            step_norm: step,
            seconds: self.start.elapsed().as_secs_f64(),
        });
    }
}

/// Gradient ascent on the dual function `g(lambda) = inf_x L(x, lambda)`,
/// treating the whole problem as one block.
///
/// Requires a strictly convex objective (caller-asserted); an unbounded inner
/// minimization is reported as a `Diverged` status. The trace `objective`
/// column records the dual values `L(x^{k+1}, lambda^k)`, which lower-bound
/// the optimum.
pub fn dual_ascent(
    p: &SeparableProblem,
    cfg: &SolverConfig,
    init: Option<&IterateState>,
) -> Result<SolveResult, SolveError> {
    cfg.validate()?;
    ensure_unconstrained(p, "dual_ascent")?;
    let mut state = match init {
        Some(s) => s.clone(),
        None => IterateState::zeros(p),
    };
    state.validate(p)?;
    let dims = block_dims(p);
    let mut rec = LoopRecorder::new();

    let r0 = p.coupling_residual(&state.x)?;
    let s0 = stationarity_norm(p, &state.x, &state.lambda)?;
    let l0 = p.total_objective(&state.x)? + state.lambda.dot(&r0);
    rec.push(0, l0, r0.norm(), s0, 0.0);
    if r0.norm() <= cfg.tol_primal && s0 <= cfg.tol_dual {
        return Ok(SolveResult { state, trace: rec.trace, status: SolveStatus::Converged });
    }

    let mut status = SolveStatus::MaxIter;
    for k in 1..=cfg.max_iter {
        // x-update: joint argmin of L(x, lambda^k), assembled blockwise so a
        // single-block problem reproduces dual_decomposition bit-for-bit.
        let glams: Vec<DVector<f64>> =
            p.blocks().iter().map(|b| b.coupling().transpose() * &state.lambda).collect();
        let glam_stacked = stack_blocks(&glams);
        let inner = InnerProblem {
            f: Box::new(|xs: &DVector<f64>| {
                let parts = unstack_blocks(xs, &dims);
                let mut total = glam_stacked.dot(xs);
                for (blk, xi) in p.blocks().iter().zip(&parts) {
                    total += blk.objective_value(xi);
                }
                Ok(total)
            }),
            grad: Box::new(|xs: &DVector<f64>| {
                let parts = unstack_blocks(xs, &dims);
                let mut grads = Vec::with_capacity(parts.len());
                for (blk, xi) in p.blocks().iter().zip(&parts) {
                    grads.push(blk.objective_gradient(xi)?);
                }
                Ok(stack_blocks(&grads) + &glam_stacked)
            }),
            hess: Box::new(|xs: &DVector<f64>| {
                let parts = unstack_blocks(xs, &dims);
                let n = xs.len();
                let mut h = DMatrix::zeros(n, n);
                let mut offset = 0;
                for (blk, xi) in p.blocks().iter().zip(&parts) {
                    let hb = calculus::fd_hessian(
                        blk.objective(),
                        xi,
                        calculus::default_hessian_step(),
                    )?;
                    h.view_mut((offset, offset), (blk.dim(), blk.dim())).copy_from(&hb);
                    offset += blk.dim();
                }
                Ok(h)
            }),
        };
        let xs_prev = state.stacked_x();
        let xs = match damped_newton(&inner, xs_prev.clone(), cfg.inner_tol, false) {
            Ok(v) => v,
            Err(SolveError::Inner(_)) => {
                status = SolveStatus::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        let x_new = unstack_blocks(&xs, &dims);

        let r = p.coupling_residual(&x_new)?;
        let dual_value = p.total_objective(&x_new)? + state.lambda.dot(&r);
        state.lambda += &r * cfg.alpha;
        let dual_res = stationarity_norm(p, &x_new, &state.lambda)?;
        let step = (&xs - &xs_prev).norm();
        let prev_norm = xs_prev.norm();
        state.x = x_new;
        state.z = state.x.clone();
        rec.push(k, dual_value, r.norm(), dual_res, step);
        if r.norm() <= cfg.tol_primal && step <= cfg.tol_dual * (1.0 + prev_norm) {
            status = SolveStatus::Converged;
            break;
        }
    }
    Ok(SolveResult { state, trace: rec.trace, status })
}

/// Dual decomposition: the dual-ascent iteration with the x-update split into
/// independent per-block argmins (scatter `lambda`, solve blocks, gather
/// `A_i x_i`, ascend).
///
/// Block subproblems run under `cfg.mode`; results are reduced in block order
/// so both modes produce identical traces. A coupling residual that fails to
/// decrease over a 20-iteration window while staying above `10 * tol_primal`
/// is reported as `Oscillating`.
pub fn dual_decomposition(
    p: &SeparableProblem,
    cfg: &SolverConfig,
    init: Option<&IterateState>,
) -> Result<SolveResult, SolveError> {
    cfg.validate()?;
    ensure_unconstrained(p, "dual_decomposition")?;
    let mut state = match init {
        Some(s) => s.clone(),
        None => IterateState::zeros(p),
    };
    state.validate(p)?;
    let mut rec = LoopRecorder::new();

    let r0 = p.coupling_residual(&state.x)?;
    let s0 = stationarity_norm(p, &state.x, &state.lambda)?;
    let l0 = p.total_objective(&state.x)? + state.lambda.dot(&r0);
    rec.push(0, l0, r0.norm(), s0, 0.0);
    if r0.norm() <= cfg.tol_primal && s0 <= cfg.tol_dual {
        return Ok(SolveResult { state, trace: rec.trace, status: SolveStatus::Converged });
    }

    let mut residual_history: Vec<f64> = Vec::new();
    let mut status = SolveStatus::MaxIter;
    for k in 1..=cfg.max_iter {
        // Scatter lambda, solve every block independently.
        let lambda = state.lambda.clone();
        let tasks: Vec<_> = p
            .blocks()
            .iter()
            .zip(&state.x)
            .map(|(blk, xi)| {
                let glam = blk.coupling().transpose() * &lambda;
                let warm = xi.clone();
                let tol = cfg.inner_tol;
                move || block_lagrangian_argmin(blk, &glam, warm, tol)
            })
            .collect();
        let (outcome, _) = map_blocks(tasks, &cfg.mode);
        let x_new = match outcome {
            Ok(v) => v,
            Err(failures) => {
                let all_inner = failures
                    .failures
                    .iter()
                    .all(|(_, e)| matches!(e, SolveError::Inner(_)));
                if all_inner {
                    status = SolveStatus::Diverged;
                    break;
                }
                let (block, err) = failures.failures.into_iter().next().expect("nonempty");
                return Err(SolveError::BlockFailure {
                    block,
                    iteration: k,
                    message: err.to_string(),
                });
            }
        };

        // Gather and ascend.
        let r = p.coupling_residual(&x_new)?;
        let dual_value = p.total_objective(&x_new)? + state.lambda.dot(&r);
        state.lambda += &r * cfg.alpha;
        let dual_res = stationarity_norm(p, &x_new, &state.lambda)?;
        let xs_prev = state.stacked_x();
        let xs = stack_blocks(&x_new);
        let step = (&xs - &xs_prev).norm();
        let prev_norm = xs_prev.norm();
        state.x = x_new;
        state.z = state.x.clone();
        rec.push(k, dual_value, r.norm(), dual_res, step);

        if r.norm() <= cfg.tol_primal && step <= cfg.tol_dual * (1.0 + prev_norm) {
            status = SolveStatus::Converged;
            break;
        }
        residual_history.push(r.norm());
        if residual_history.len() > OSCILLATION_WINDOW {
            let idx = residual_history.len() - 1 - OSCILLATION_WINDOW;
            let window = &residual_history[idx..];
            let floor = 10.0 * cfg.tol_primal;
            let all_above = window.iter().all(|&v| v > floor);
            let no_decrease = r.norm() >= window[0] * (1.0 - 1e-12);
            if all_above && no_decrease {
                status = SolveStatus::Oscillating;
                break;
            }
        }
    }
    Ok(SolveResult { state, trace: rec.trace, status })
}

/// Method of multipliers: augmented-Lagrangian x-update followed by the
/// multiplier step `y <- y + rho (Ax - b)`.
///
/// The penalty makes the x-update well-posed for convex objectives that are
/// not strictly convex; flat directions resolve to the minimum-norm point.
/// On success the final pair satisfies both feasibility conditions: the
/// coupling residual is below `tol_primal` and the stationarity
/// `grad f + A^T y` transfers from the inner solve.
pub fn method_of_multipliers(
    p: &SeparableProblem,
    cfg: &SolverConfig,
    init: Option<&IterateState>,
) -> Result<SolveResult, SolveError> {
    cfg.validate()?;
    if cfg.rho <= 0.0 {
        return Err(SolveError::InvalidConfig("method of multipliers requires rho > 0".into()));
    }
    ensure_unconstrained(p, "method_of_multipliers")?;
    let mut state = match init {
        Some(s) => s.clone(),
        None => IterateState::zeros(p),
    };
    state.validate(p)?;
    let dims = block_dims(p);
    let a = stacked_coupling(p);
    let ata_rho = (a.transpose() * &a) * cfg.rho;
    let b = p.coupling_rhs().clone();
    let mut rec = LoopRecorder::new();

    let r0 = p.coupling_residual(&state.x)?;
    let s0 = stationarity_norm(p, &state.x, &state.lambda)?;
    rec.push(0, p.total_objective(&state.x)?, r0.norm(), s0, 0.0);
    if r0.norm() <= cfg.tol_primal && s0 <= cfg.tol_dual {
        return Ok(SolveResult { state, trace: rec.trace, status: SolveStatus::Converged });
    }

    let mut status = SolveStatus::MaxIter;
    for k in 1..=cfg.max_iter {
        let glams: Vec<DVector<f64>> =
            p.blocks().iter().map(|blk| blk.coupling().transpose() * &state.lambda).collect();
        let glam_stacked = stack_blocks(&glams);
        let inner = InnerProblem {
            f: Box::new(|xs: &DVector<f64>| {
                let parts = unstack_blocks(xs, &dims);
                let mut total = glam_stacked.dot(xs);
                for (blk, xi) in p.blocks().iter().zip(&parts) {
                    total += blk.objective_value(xi);
                }
                let res = &a * xs - &b;
                Ok(total + 0.5 * cfg.rho * res.norm_squared())
            }),
            grad: Box::new(|xs: &DVector<f64>| {
                let parts = unstack_blocks(xs, &dims);
                let mut grads = Vec::with_capacity(parts.len());
                for (blk, xi) in p.blocks().iter().zip(&parts) {
                    grads.push(blk.objective_gradient(xi)?);
                }
                let res = &a * xs - &b;
                Ok(stack_blocks(&grads) + &glam_stacked + a.transpose() * res * cfg.rho)
            }),
            hess: Box::new(|xs: &DVector<f64>| {
                let parts = unstack_blocks(xs, &dims);
                let mut h = ata_rho.clone();
                let mut offset = 0;
                for (blk, xi) in p.blocks().iter().zip(&parts) {
                    let hb = calculus::fd_hessian(
                        blk.objective(),
                        xi,
                        calculus::default_hessian_step(),
                    )?;
                    let mut view = h.view_mut((offset, offset), (blk.dim(), blk.dim()));
                    view += &hb;
                    offset += blk.dim();
                }
                Ok(h)
            }),
        };
        let xs_prev = state.stacked_x();
        let xs = match damped_newton(&inner, xs_prev.clone(), cfg.inner_tol, true) {
            Ok(v) => v,
            Err(SolveError::Inner(_)) => {
                status = SolveStatus::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        let x_new = unstack_blocks(&xs, &dims);

        let r = p.coupling_residual(&x_new)?;
        // Multiplier step with step size exactly rho: this transfers the
        // inner stationarity to the new multiplier.
        state.lambda += &r * cfg.rho;
        let dual_res = stationarity_norm(p, &x_new, &state.lambda)?;
        let step = (&xs - &xs_prev).norm();
        let prev_norm = xs_prev.norm();
        state.x = x_new;
        state.z = state.x.clone();
        rec.push(k, p.total_objective(&state.x)?, r.norm(), dual_res, step);
        if r.norm() <= cfg.tol_primal && step <= cfg.tol_dual * (1.0 + prev_norm) {
            status = SolveStatus::Converged;
            break;
        }
    }
    Ok(SolveResult { state, trace: rec.trace, status })
}

/// Builds the inner problem of one ADMM half-step: minimize
/// `f(v) + y^T (M v + offset) + (rho/2) ||M v + offset||^2` over `v`.
fn admm_half_step(
    f: &ScalarField,
    m: &DMatrix<f64>,
    offset: &DVector<f64>,
    y: &DVector<f64>,
    rho: f64,
    warm: DVector<f64>,
    inner_tol: f64,
) -> Result<DVector<f64>, SolveError> {
    let mtm_rho = (m.transpose() * m) * rho;
    let mty = m.transpose() * y;
    let inner = InnerProblem {
        f: Box::new(|v: &DVector<f64>| {
            let res = m * v + offset;
            Ok(f.eval(v) + y.dot(&res) + 0.5 * rho * res.norm_squared())
        }),
        grad: Box::new(|v: &DVector<f64>| {
            let res = m * v + offset;
            let g = calculus::fd_gradient(f, v, calculus::default_gradient_step())?;
            Ok(g + &mty + m.transpose() * res * rho)
        }),
        hess: Box::new(|v: &DVector<f64>| {
            let hf = calculus::fd_hessian(f, v, calculus::default_hessian_step())?;
            Ok(hf + &mtm_rho)
        }),
    };
    damped_newton(&inner, warm, inner_tol, true)
}

/// Two-block ADMM on `min f(x) + g(z)` subject to `A x + B z = c`.
///
/// The returned state stores the two primal blocks as `state.x[0]` (x) and
/// `state.x[1]` (z), with `state.lambda` holding the constraint multiplier.
pub fn admm_two_block(
    f: &ScalarField,
    g: &ScalarField,
    a: &DMatrix<f64>,
    b_mat: &DMatrix<f64>,
    c: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<SolveResult, SolveError> {
    cfg.validate()?;
    if cfg.rho <= 0.0 {
        return Err(SolveError::InvalidConfig("ADMM requires rho > 0".into()));
    }
    let m = c.len();
    if a.nrows() != m || b_mat.nrows() != m {
        return Err(SolveError::InvalidConfig(format!(
            "constraint rows disagree: A has {}, B has {}, c has {m}",
            a.nrows(),
            b_mat.nrows()
        )));
    }
    if a.ncols() != f.dim() || b_mat.ncols() != g.dim() {
        return Err(SolveError::InvalidConfig(
            "constraint matrix columns must match objective dimensions".into(),
        ));
    }

    let mut x = DVector::zeros(f.dim());
    let mut z = DVector::zeros(g.dim());
    let mut y = DVector::<f64>::zeros(m);
    let mut rec = LoopRecorder::new();

    let residual = |x: &DVector<f64>, z: &DVector<f64>| a * x + b_mat * z - c;
    let stationarity = |x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>| {
        let gx = calculus::fd_gradient(f, x, calculus::default_gradient_step())?
            + a.transpose() * y;
        let gz = calculus::fd_gradient(g, z, calculus::default_gradient_step())?
            + b_mat.transpose() * y;
        Ok::<f64, SolveError>((gx.norm_squared() + gz.norm_squared()).sqrt())
    };

    let r0 = residual(&x, &z);
    rec.push(0, f.eval(&x) + g.eval(&z), r0.norm(), stationarity(&x, &z, &y)?, 0.0);

    let mut status = SolveStatus::MaxIter;
    for k in 1..=cfg.max_iter {
        let x_prev = x.clone();
        let z_prev = z.clone();

        let off_x = b_mat * &z - c;
        x = match admm_half_step(f, a, &off_x, &y, cfg.rho, x.clone(), cfg.inner_tol) {
            Ok(v) => v,
            Err(SolveError::Inner(_)) => {
                status = SolveStatus::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        let off_z = a * &x - c;
        z = match admm_half_step(g, b_mat, &off_z, &y, cfg.rho, z.clone(), cfg.inner_tol) {
            Ok(v) => v,
            Err(SolveError::Inner(_)) => {
                status = SolveStatus::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        let r = residual(&x, &z);
        y += &r * cfg.rho;

        let step = ((&x - &x_prev).norm_squared() + (&z - &z_prev).norm_squared()).sqrt();
        let prev_norm = (x_prev.norm_squared() + z_prev.norm_squared()).sqrt();
        rec.push(k, f.eval(&x) + g.eval(&z), r.norm(), stationarity(&x, &z, &y)?, step);
        if r.norm() <= cfg.tol_primal && step <= cfg.tol_dual * (1.0 + prev_norm) {
            status = SolveStatus::Converged;
            break;
        }
    }

    let state = IterateState {
        x: vec![x.clone(), z.clone()],
        z: vec![x, z],
        lambda: y,
        gamma: vec![DVector::zeros(0), DVector::zeros(0)],
        mu: vec![DVector::zeros(0), DVector::zeros(0)],
    };
    Ok(SolveResult { state, trace: rec.trace, status })
}

/// Consensus ADMM on `min sum f_i(x_i)` subject to `x_i - z = 0`.
///
/// Requires every block to have the same dimension (consensus form). The
/// trace `primal_res` records the stacked consensus residual
/// `||(x_i - z)_i||`. Per-block dual vectors end up in `state.gamma`; the
/// shared variable is replicated into every `state.z` slot.
pub fn consensus_admm(
    p: &SeparableProblem,
    cfg: &SolverConfig,
    init: Option<&IterateState>,
) -> Result<SolveResult, SolveError> {
    cfg.validate()?;
    if cfg.rho <= 0.0 {
        return Err(SolveError::InvalidConfig("consensus ADMM requires rho > 0".into()));
    }
    ensure_unconstrained(p, "consensus_admm")?;
    let n = p.blocks()[0].dim();
    if p.blocks().iter().any(|blk| blk.dim() != n) {
        return Err(SolveError::NotConsensusForm(
            "blocks have differing dimensions; consensus form requires one shared shape".into(),
        ));
    }
    let nblocks = p.num_blocks();

    let mut state = match init {
        Some(s) => s.clone(),
        None => IterateState::zeros(p),
    };
    state.validate(p)?;
    // Shared variable starts as the block-order mean of the auxiliary
    // iterates; per-block duals start at zero unless a warm start supplies
    // vectors of the right shape in `gamma`.
    let mut z = DVector::zeros(n);
    for zi in &state.z {
        z += zi;
    }
    z /= nblocks as f64;
    let mut y: Vec<DVector<f64>> = if state.gamma.iter().all(|g| g.len() == n) {
        state.gamma.clone()
    } else {
        vec![DVector::zeros(n); nblocks]
    };

    let mut rec = LoopRecorder::new();
    let consensus_res = |x: &[DVector<f64>], z: &DVector<f64>| -> f64 {
        x.iter().map(|xi| (xi - z).norm_squared()).sum::<f64>().sqrt()
    };
    let consensus_stat = |x: &[DVector<f64>], y: &[DVector<f64>]| -> Result<f64, SolveError> {
        let mut acc = 0.0;
        for (blk, (xi, yi)) in p.blocks().iter().zip(x.iter().zip(y)) {
            acc += (blk.objective_gradient(xi)? + yi).norm_squared();
        }
        Ok(acc.sqrt())
    };

    let r0 = consensus_res(&state.x, &z);
    rec.push(0, p.total_objective(&state.x)?, r0, consensus_stat(&state.x, &y)?, 0.0);
    if r0 <= cfg.tol_primal && consensus_stat(&state.x, &y)? <= cfg.tol_dual {
        state.z = vec![z; nblocks];
        state.gamma = y;
        return Ok(SolveResult { state, trace: rec.trace, status: SolveStatus::Converged });
    }

    let mut status = SolveStatus::MaxIter;
    for k in 1..=cfg.max_iter {
        // Concurrent x-updates against the shared snapshot (z^k, y^k).
        let z_snap = z.clone();
        let tasks: Vec<_> = p
            .blocks()
            .iter()
            .zip(state.x.iter().zip(&y))
            .map(|(blk, (xi, yi))| {
                let warm = xi.clone();
                let yi = yi.clone();
                let z_snap = z_snap.clone();
                let rho = cfg.rho;
                let tol = cfg.inner_tol;
                move || {
                    let eye = DMatrix::identity(blk.dim(), blk.dim());
                    let neg_z = -&z_snap;
                    admm_half_step(blk.objective(), &eye, &neg_z, &yi, rho, warm, tol)
                }
            })
            .collect();
        let (outcome, _) = map_blocks(tasks, &cfg.mode);
        let x_new = match outcome {
            Ok(v) => v,
            Err(failures) => {
                let all_inner =
                    failures.failures.iter().all(|(_, e)| matches!(e, SolveError::Inner(_)));
                if all_inner {
                    status = SolveStatus::Diverged;
                    break;
                }
                let (block, err) = failures.failures.into_iter().next().expect("nonempty");
                return Err(SolveError::BlockFailure {
                    block,
                    iteration: k,
                    message: err.to_string(),
                });
            }
        };

        // Central averaging step, accumulated in block order.
        let mut z_new = DVector::zeros(n);
        for (xi, yi) in x_new.iter().zip(&y) {
            z_new += xi + yi / cfg.rho;
        }
        z_new /= nblocks as f64;

        // Dual updates.
        for (yi, xi) in y.iter_mut().zip(&x_new) {
            *yi += (xi - &z_new) * cfg.rho;
        }

        let step = x_new
            .iter()
            .zip(&state.x)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt();
        let prev_norm = state.stacked_x().norm();
        let r = consensus_res(&x_new, &z_new);
        state.x = x_new;
        z = z_new;
        rec.push(k, p.total_objective(&state.x)?, r, consensus_stat(&state.x, &y)?, step);
        if r <= cfg.tol_primal && step <= cfg.tol_dual * (1.0 + prev_norm) {
            status = SolveStatus::Converged;
            break;
        }
    }

    state.z = vec![z; nblocks];
    state.gamma = y;
    Ok(SolveResult { state, trace: rec.trace, status })
}

/// Duality-gap diagnostic `f(x) - g(lambda)`.
#[derive(Debug, Clone, Copy)]
pub struct DualityGapEstimate {
    pub primal_value: f64,
    /// `g(lambda)`; negative infinity when the inner minimization is
    /// unbounded below.
    pub dual_value: f64,
    /// `primal_value - dual_value`; nonnegative for convex instances and zero
    /// at a primal-dual optimal pair.
    pub gap: f64,
    /// Set when the inner minimization diverged and the sentinel values are
    /// in effect.
    pub diverged: bool,
}

/// Estimates the duality gap at a primal-feasible `x` and multiplier
/// `lambda` by minimizing the Lagrangian blockwise.
pub fn duality_gap_estimate(
    p: &SeparableProblem,
    x: &[DVector<f64>],
    lambda: &DVector<f64>,
) -> Result<DualityGapEstimate, SolveError> {
    ensure_unconstrained(p, "duality_gap_estimate")?;
    let primal = p.total_objective(x)?;
    let mut dual = -lambda.dot(p.coupling_rhs());
    for (blk, xi) in p.blocks().iter().zip(x) {
        let glam = blk.coupling().transpose() * lambda;
        match block_lagrangian_argmin(blk, &glam, xi.clone(), 1e-10) {
            Ok(xmin) => {
                dual += blk.objective_value(&xmin) + glam.dot(&xmin);
            }
            Err(SolveError::Inner(_)) => {
                return Ok(DualityGapEstimate {
                    primal_value: primal,
                    dual_value: f64::NEG_INFINITY,
                    gap: f64::INFINITY,
                    diverged: true,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(DualityGapEstimate {
        primal_value: primal,
        dual_value: dual,
        gap: primal - dual,
        diverged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ExecutionMode;
    use nalgebra::{dmatrix, dvector};

    /// Block with f(x) = 0.5 ||x||^2 and an analytic gradient.
    fn half_norm_block(dim: usize, coupling: DMatrix<f64>) -> LocalBlock {
        let f = ScalarField::new(dim, |x| 0.5 * x.norm_squared());
        LocalBlock::new(f).with_gradient(|x| x.clone()).with_coupling(coupling)
    }

    fn linear_block(coeffs: DVector<f64>, coupling: DMatrix<f64>) -> LocalBlock {
        let c = coeffs.clone();
        let f = ScalarField::new(coeffs.len(), move |x| c.dot(x));
        LocalBlock::new(f).with_gradient(move |_| coeffs.clone()).with_coupling(coupling)
    }

    #[test]
    fn dual_ascent_scalar_problem() {
        // min 0.5 x^2 s.t. x = 1: x* = 1, lambda* = -1.
        let p = SeparableProblem::new(vec![half_norm_block(1, dmatrix![1.0])], dvector![1.0])
            .unwrap();
        let cfg = SolverConfig { max_iter: 5000, tol_primal: 1e-6, ..Default::default() };
        let res = dual_ascent(&p, &cfg, None).unwrap();
        assert_eq!(res.status, SolveStatus::Converged);
        assert!((res.state.x[0][0] - 1.0).abs() < 1e-4);
        assert!((res.state.lambda[0] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn dual_ascent_two_dim_problem() {
        // min 0.5 ||x||^2 s.t. x1 + x2 = 2: x* = (1, 1), lambda* = -1.
        let p = SeparableProblem::new(vec![half_norm_block(2, dmatrix![1.0, 1.0])], dvector![2.0])
            .unwrap();
        let cfg = SolverConfig { max_iter: 5000, tol_primal: 1e-6, ..Default::default() };
        let res = dual_ascent(&p, &cfg, None).unwrap();
        assert_eq!(res.status, SolveStatus::Converged);
        assert!((res.state.x[0][0] - 1.0).abs() < 1e-4);
        assert!((res.state.x[0][1] - 1.0).abs() < 1e-4);
        assert!((res.state.lambda[0] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn dual_ascent_diverges_on_linear_objective() {
        let p = SeparableProblem::new(
            vec![linear_block(dvector![1.0], dmatrix![1.0])],
            dvector![1.0],
        )
        .unwrap();
        let res = dual_ascent(&p, &SolverConfig::default(), None).unwrap();
        assert_eq!(res.status, SolveStatus::Diverged);
    }

    #[test]
    fn dual_ascent_rejects_constrained_blocks() {
        let blk = half_norm_block(1, dmatrix![1.0])
            .with_bounds(dvector![0.0], dvector![f64::INFINITY]);
        let p = SeparableProblem::new(vec![blk], dvector![1.0]).unwrap();
        assert!(matches!(
            dual_ascent(&p, &SolverConfig::default(), None),
            Err(SolveError::UnsupportedLocalConstraints { block: 0, .. })
        ));
    }

    #[test]
    fn dual_decomposition_two_blocks() {
        let p = SeparableProblem::new(
            vec![half_norm_block(1, dmatrix![1.0]), half_norm_block(1, dmatrix![1.0])],
            dvector![2.0],
        )
        .unwrap();
        let cfg = SolverConfig { max_iter: 5000, tol_primal: 1e-6, ..Default::default() };
        let res = dual_decomposition(&p, &cfg, None).unwrap();
        assert_eq!(res.status, SolveStatus::Converged);
        assert!((res.state.x[0][0] - 1.0).abs() < 1e-4);
        assert!((res.state.x[1][0] - 1.0).abs() < 1e-4);
        assert!((res.state.lambda[0] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn dual_decomposition_linear_blocks_fail() {
        let p = SeparableProblem::new(
            vec![
                linear_block(dvector![1.0], dmatrix![1.0]),
                linear_block(dvector![-0.5], dmatrix![1.0]),
            ],
            dvector![2.0],
        )
        .unwrap();
        let cfg = SolverConfig { max_iter: 100, ..Default::default() };
        let res = dual_decomposition(&p, &cfg, None).unwrap();
        assert!(
            matches!(res.status, SolveStatus::Diverged | SolveStatus::Oscillating),
            "status = {:?}",
            res.status
        );
    }

    #[test]
    fn dual_decomposition_oscillates_with_large_step() {
        // alpha = 2 on the scalar problem flips the dual error sign exactly,
        // so the residual never decreases.
        let p = SeparableProblem::new(vec![half_norm_block(1, dmatrix![1.0])], dvector![1.0])
            .unwrap();
        let cfg = SolverConfig { alpha: 2.0, max_iter: 200, ..Default::default() };
        let res = dual_decomposition(&p, &cfg, None).unwrap();
        assert_eq!(res.status, SolveStatus::Oscillating);
        assert!(res.trace.iterations() <= 25);
    }

    #[test]
    fn single_block_matches_dual_ascent_bitwise() {
        let make = || {
            SeparableProblem::new(
                vec![half_norm_block(2, dmatrix![1.0, 1.0])],
                dvector![2.0],
            )
            .unwrap()
        };
        let cfg = SolverConfig { max_iter: 40, ..Default::default() };
        let da = dual_ascent(&make(), &cfg, None).unwrap();
        let dd = dual_decomposition(&make(), &cfg, None).unwrap();
        assert!(da.trace.same_numeric_path(&dd.trace));
        for (a, b) in da.state.x[0].iter().zip(dd.state.x[0].iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn mom_strictly_convex() {
        let p = SeparableProblem::new(vec![half_norm_block(2, dmatrix![1.0, 1.0])], dvector![2.0])
            .unwrap();
        let cfg = SolverConfig { tol_primal: 1e-10, ..Default::default() };
        let res = method_of_multipliers(&p, &cfg, None).unwrap();
        assert_eq!(res.status, SolveStatus::Converged);
        assert!((res.state.x[0][0] - 1.0).abs() < 1e-6);
        assert!((res.state.x[0][1] - 1.0).abs() < 1e-6);
        assert!((res.state.lambda[0] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn mom_converges_where_dual_ascent_fails() {
        // min x1 + x2 s.t. x1 + x2 = 2: convex but not strictly convex; any
        // feasible point is optimal. The augmented term fixes the Ax
        // direction and the tie-break settles the flat one.
        let p = SeparableProblem::new(
            vec![linear_block(dvector![1.0, 1.0], dmatrix![1.0, 1.0])],
            dvector![2.0],
        )
        .unwrap();
        let cfg = SolverConfig { tol_primal: 1e-8, ..Default::default() };
        let res = method_of_multipliers(&p, &cfg, None).unwrap();
        assert_eq!(res.status, SolveStatus::Converged);
        let r = p.coupling_residual(&res.state.x).unwrap();
        assert!(r.norm() < 1e-8, "residual {}", r.norm());

        let da = dual_ascent(&p, &SolverConfig::default(), None).unwrap();
        assert_eq!(da.status, SolveStatus::Diverged);
    }

    #[test]
    fn mom_warm_start_takes_zero_iterations() {
        let p = SeparableProblem::new(vec![half_norm_block(2, dmatrix![1.0, 1.0])], dvector![2.0])
            .unwrap();
        let mut init = IterateState::zeros(&p);
        init.x[0] = dvector![1.0, 1.0];
        init.z[0] = dvector![1.0, 1.0];
        init.lambda = dvector![-1.0];
        let res = method_of_multipliers(&p, &SolverConfig::default(), Some(&init)).unwrap();
        assert_eq!(res.status, SolveStatus::Converged);
        assert_eq!(res.trace.iterations(), 0);
    }

    #[test]
    fn mom_dual_feasibility_transfers() {
        let p = SeparableProblem::new(
            vec![half_norm_block(2, dmatrix![1.0, -1.0]), half_norm_block(1, dmatrix![2.0])],
            dvector![1.5],
        )
        .unwrap();
        let cfg = SolverConfig::default();
        let res = method_of_multipliers(&p, &cfg, None).unwrap();
        assert_eq!(res.status, SolveStatus::Converged);
        let y_norm = res.state.lambda.norm();
        for rec in &res.trace.records()[1..] {
            assert!(
                rec.dual_res <= cfg.inner_tol * (1.0 + y_norm) + 1e-12,
                "stationarity {} at iter {}",
                rec.dual_res,
                rec.iter
            );
        }
    }

    #[test]
    fn mom_residual_decreases_monotonically_late() {
        let p = SeparableProblem::new(
            vec![half_norm_block(2, dmatrix![1.0, 0.5]), half_norm_block(2, dmatrix![0.25, 1.0])],
            dvector![3.0],
        )
        .unwrap();
        let cfg = SolverConfig { tol_primal: 1e-10, tol_dual: 1e-8, ..Default::default() };
        let res = method_of_multipliers(&p, &cfg, None).unwrap();
        let recs = res.trace.records();
        let start = recs.len() / 5; // last 80%
        for w in recs[start..].windows(2) {
            // Allow the inner-solve precision floor (~1e-11) as slack.
            assert!(
                w[1].primal_res <= w[0].primal_res * (1.0 + 1e-9) + 5e-11,
                "residual rose from {} to {}",
                w[0].primal_res,
                w[1].primal_res
            );
        }
    }

    #[test]
    fn admm_symmetric_parabolas() {
        let f = ScalarField::new(1, |x| (x[0] - 1.0).powi(2));
        let g = ScalarField::new(1, |z| (z[0] - 3.0).powi(2));
        let cfg = SolverConfig { tol_primal: 1e-10, ..Default::default() };
        let res =
            admm_two_block(&f, &g, &dmatrix![1.0], &dmatrix![-1.0], &dvector![0.0], &cfg).unwrap();
        assert_eq!(res.status, SolveStatus::Converged);
        assert!((res.state.x[0][0] - 2.0).abs() < 1e-5, "x = {}", res.state.x[0][0]);
        assert!((res.state.x[1][0] - 2.0).abs() < 1e-5, "z = {}", res.state.x[1][0]);
    }

    #[test]
    fn admm_constraint_pins_x() {
        let f = ScalarField::new(1, |x| (x[0] - 1.0).powi(2));
        let g = ScalarField::new(1, |_| 0.0);
        let cfg = SolverConfig::default();
        let res =
            admm_two_block(&f, &g, &dmatrix![1.0], &dmatrix![0.0], &dvector![1.0], &cfg).unwrap();
        assert_eq!(res.status, SolveStatus::Converged);
        assert!((res.state.x[0][0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn admm_satisfies_optimality_conditions() {
        // At a converged run all three conditions hold at once: the primal
        // constraint and the two stationarity rows. The x-row lags one
        // z-step behind, so its bound scales with rho times the step size.
        let f = ScalarField::new(1, |x| (x[0] - 1.0).powi(2) + 0.25 * x[0].powi(4));
        let g = ScalarField::new(1, |z| 2.0 * (z[0] - 3.0).powi(2));
        let a = dmatrix![1.0];
        let b_mat = dmatrix![-1.0];
        let c = dvector![0.5];
        let cfg = SolverConfig { tol_primal: 1e-10, tol_dual: 1e-9, ..Default::default() };
        let res = admm_two_block(&f, &g, &a, &b_mat, &c, &cfg).unwrap();
        assert_eq!(res.status, SolveStatus::Converged);
        let x = &res.state.x[0];
        let z = &res.state.x[1];
        let y = &res.state.lambda;
        let primal = (&a * x + &b_mat * z - &c).norm();
        assert!(primal <= cfg.tol_primal, "primal {primal:e}");
        let gx = calculus::fd_gradient(&f, x, calculus::default_gradient_step()).unwrap()
            + a.transpose() * y;
        let gz = calculus::fd_gradient(&g, z, calculus::default_gradient_step()).unwrap()
            + b_mat.transpose() * y;
        let dual_scale = cfg.rho * (1.0 + x.norm() + z.norm()) * cfg.tol_dual + 1e-8;
        assert!(gx.norm() <= dual_scale, "x stationarity {:e}", gx.norm());
        assert!(gz.norm() <= dual_scale, "z stationarity {:e}", gz.norm());
    }

    #[test]
    fn dual_ascent_trace_lower_bounds_optimum() {
        // Each recorded dual value g(lambda) lower-bounds the optimum f*.
        let p = SeparableProblem::new(vec![half_norm_block(2, dmatrix![1.0, 1.0])], dvector![2.0])
            .unwrap();
        let cfg = SolverConfig { max_iter: 3000, tol_primal: 1e-7, ..Default::default() };
        let res = dual_ascent(&p, &cfg, None).unwrap();
        assert_eq!(res.status, SolveStatus::Converged);
        let f_star = 1.0; // 0.5 ||(1,1)||^2
        for rec in &res.trace.records()[1..] {
            assert!(
                rec.objective <= f_star + 1e-8,
                "dual value {} exceeds the optimum at iter {}",
                rec.objective,
                rec.iter
            );
        }
    }

    #[test]
    fn admm_matches_stacked_kkt_on_random_quadratics() {
        // min 0.5 a x^2 + p x + 0.5 c z^2 + q z s.t. alpha x + beta z = gamma.
        let instances = [
            (1.3, 0.4, 2.1, -0.7, 1.0, -1.0, 0.5),
            (0.8, -0.2, 1.5, 0.3, 2.0, 1.0, 1.0),
            (2.5, 1.0, 0.6, 0.0, -1.0, 0.5, -0.3),
        ];
        for &(a0, p0, c0, q0, al, be, ga) in &instances {
            let f = ScalarField::new(1, move |x| 0.5 * a0 * x[0] * x[0] + p0 * x[0]);
            let g = ScalarField::new(1, move |z| 0.5 * c0 * z[0] * z[0] + q0 * z[0]);
            let cfg = SolverConfig {
                rho: 1.0,
                max_iter: 500,
                tol_primal: 1e-10,
                tol_dual: 1e-10,
                ..Default::default()
            };
            let res = admm_two_block(
                &f,
                &g,
                &dmatrix![al],
                &dmatrix![be],
                &dvector![ga],
                &cfg,
            )
            .unwrap();
            // Stacked KKT oracle: [[a,0,al],[0,c,be],[al,be,0]] [x;z;y] = [-p;-q;ga].
            let kkt = dmatrix![a0, 0.0, al; 0.0, c0, be; al, be, 0.0];
            let rhs = dvector![-p0, -q0, ga];
            let sol = kkt.lu().solve(&rhs).unwrap();
            assert!(
                (res.state.x[0][0] - sol[0]).abs() < 1e-6,
                "x: {} vs {}",
                res.state.x[0][0],
                sol[0]
            );
            assert!(
                (res.state.x[1][0] - sol[1]).abs() < 1e-6,
                "z: {} vs {}",
                res.state.x[1][0],
                sol[1]
            );
        }
    }

    fn consensus_problem(centers: &[f64]) -> SeparableProblem {
        let blocks: Vec<LocalBlock> = centers
            .iter()
            .map(|&c| {
                let f = ScalarField::new(1, move |x| (x[0] - c) * (x[0] - c));
                LocalBlock::new(f)
                    .with_gradient(move |x| dvector![2.0 * (x[0] - c)])
                    .with_coupling(DMatrix::zeros(0, 1))
            })
            .collect();
        SeparableProblem::new(blocks, dvector![]).unwrap()
    }

    #[test]
    fn consensus_mean_of_two_parabolas() {
        let p = consensus_problem(&[1.0, 3.0]);
        let cfg = SolverConfig { tol_primal: 1e-10, ..Default::default() };
        let res = consensus_admm(&p, &cfg, None).unwrap();
        assert_eq!(res.status, SolveStatus::Converged);
        assert!((res.state.z[0][0] - 2.0).abs() < 1e-6, "z = {}", res.state.z[0][0]);
    }

    #[test]
    fn consensus_precision_weighted_mean() {
        // f_i = a_i (x - c_i)^2: minimizer of the sum is sum(a c) / sum(a).
        let data: Vec<(f64, f64)> = (0..10)
            .map(|i| (0.5 + 0.3 * i as f64, -2.0 + 0.7 * i as f64))
            .collect();
        let blocks: Vec<LocalBlock> = data
            .iter()
            .map(|&(a, c)| {
                let f = ScalarField::new(1, move |x| a * (x[0] - c) * (x[0] - c));
                LocalBlock::new(f)
                    .with_gradient(move |x| dvector![2.0 * a * (x[0] - c)])
                    .with_coupling(DMatrix::zeros(0, 1))
            })
            .collect();
        let p = SeparableProblem::new(blocks, dvector![]).unwrap();
        let cfg = SolverConfig { tol_primal: 1e-10, max_iter: 3000, ..Default::default() };
        let res = consensus_admm(&p, &cfg, None).unwrap();
        assert_eq!(res.status, SolveStatus::Converged);
        let num: f64 = data.iter().map(|(a, c)| a * c).sum();
        let den: f64 = data.iter().map(|(a, _)| a).sum();
        assert!((res.state.z[0][0] - num / den).abs() < 1e-6);
    }

    #[test]
    fn consensus_single_block_matches_two_block_admm() {
        // Zero tolerances force both solvers through the same fixed budget,
        // so every iterate can be compared.
        let f = ScalarField::new(1, |x| (x[0] - 1.5) * (x[0] - 1.5));
        let p = SeparableProblem::new(
            vec![LocalBlock::new(f.clone()).with_coupling(DMatrix::zeros(0, 1))],
            dvector![],
        )
        .unwrap();
        let cfg = SolverConfig {
            max_iter: 15,
            tol_primal: 0.0,
            tol_dual: 0.0,
            ..Default::default()
        };
        let cons = consensus_admm(&p, &cfg, None).unwrap();
        let g = ScalarField::new(1, |_| 0.0);
        let two = admm_two_block(&f, &g, &dmatrix![1.0], &dmatrix![-1.0], &dvector![0.0], &cfg)
            .unwrap();
        let ra = cons.trace.records();
        let rb = two.trace.records();
        assert_eq!(ra.len(), rb.len());
        // step_norm bookkeeping differs (the two-block solver counts the z
        // half as well), so the iterates are compared through the objective
        // and residual columns.
        for (a, b) in ra.iter().zip(rb) {
            assert!((a.primal_res - b.primal_res).abs() <= 1e-10, "iter {}", a.iter);
            assert!((a.objective - b.objective).abs() <= 1e-10, "iter {}", a.iter);
        }
    }

    #[test]
    fn consensus_rejects_uneven_dims() {
        let f1 = ScalarField::new(1, |x| x[0] * x[0]);
        let f2 = ScalarField::new(2, |x| x.norm_squared());
        let p = SeparableProblem::new(
            vec![
                LocalBlock::new(f1).with_coupling(DMatrix::zeros(0, 1)),
                LocalBlock::new(f2).with_coupling(DMatrix::zeros(0, 2)),
            ],
            dvector![],
        )
        .unwrap();
        assert!(matches!(
            consensus_admm(&p, &SolverConfig::default(), None),
            Err(SolveError::NotConsensusForm(_))
        ));
    }

    #[test]
    fn consensus_z_update_is_exact_minimizer() {
        // Gradient of the augmented Lagrangian in z at z^{k+1} must vanish:
        // sum_i (-y_i - rho (x_i - z)) = 0.
        let p = consensus_problem(&[1.0, 3.0, -0.5]);
        let cfg = SolverConfig { max_iter: 25, ..Default::default() };
        let res = consensus_admm(&p, &cfg, None).unwrap();
        // Recompute one averaging step from the final state.
        let rho = cfg.rho;
        let y = &res.state.gamma;
        let x = &res.state.x;
        let mut znext = DVector::zeros(1);
        for (xi, yi) in x.iter().zip(y) {
            znext += xi + yi / rho;
        }
        znext /= x.len() as f64;
        let mut grad = DVector::zeros(1);
        for (xi, yi) in x.iter().zip(y) {
            grad += -yi - (xi - &znext) * rho;
        }
        assert!(grad.norm() < 1e-8, "gradient {}", grad.norm());
    }

    #[test]
    fn duality_gap_at_optimum_is_zero() {
        let p = SeparableProblem::new(vec![half_norm_block(2, dmatrix![1.0, 1.0])], dvector![2.0])
            .unwrap();
        let est =
            duality_gap_estimate(&p, &[dvector![1.0, 1.0]], &dvector![-1.0]).unwrap();
        assert!(!est.diverged);
        assert!(est.gap.abs() < 1e-6, "gap = {}", est.gap);
    }

    #[test]
    fn duality_gap_at_zero_multiplier() {
        // g(0) = min 0.5||x||^2 = 0, f(x*) = 1, so the gap is 1.
        let p = SeparableProblem::new(vec![half_norm_block(2, dmatrix![1.0, 1.0])], dvector![2.0])
            .unwrap();
        let est = duality_gap_estimate(&p, &[dvector![1.0, 1.0]], &dvector![0.0]).unwrap();
        assert!((est.gap - 1.0).abs() < 1e-8, "gap = {}", est.gap);
    }

    #[test]
    fn duality_gap_nonnegative_for_feasible_points() {
        let p = SeparableProblem::new(vec![half_norm_block(2, dmatrix![1.0, 1.0])], dvector![2.0])
            .unwrap();
        for x0 in [[2.0, 0.0], [0.5, 1.5], [-1.0, 3.0]] {
            let est = duality_gap_estimate(&p, &[dvector![x0[0], x0[1]]], &dvector![-1.0])
                .unwrap();
            assert!(est.gap >= -1e-10, "gap = {}", est.gap);
        }
    }

    #[test]
    fn duality_gap_unbounded_reports_sentinel() {
        let p = SeparableProblem::new(
            vec![linear_block(dvector![1.0], dmatrix![1.0])],
            dvector![1.0],
        )
        .unwrap();
        let est = duality_gap_estimate(&p, &[dvector![1.0]], &dvector![0.0]).unwrap();
        assert!(est.diverged);
        assert_eq!(est.dual_value, f64::NEG_INFINITY);
        assert_eq!(est.gap, f64::INFINITY);
    }

    #[test]
    fn traces_are_deterministic_across_modes() {
        let p = SeparableProblem::new(
            vec![half_norm_block(1, dmatrix![1.0]), half_norm_block(1, dmatrix![1.0])],
            dvector![2.0],
        )
        .unwrap();
        let seq = SolverConfig { max_iter: 50, ..Default::default() };
        let conc = SolverConfig {
            max_iter: 50,
            mode: ExecutionMode::Concurrent { workers: 2 },
            ..Default::default()
        };
        let a = dual_decomposition(&p, &seq, None).unwrap();
        let b = dual_decomposition(&p, &conc, None).unwrap();
        assert!(a.trace.same_numeric_path(&b.trace));
    }
}
