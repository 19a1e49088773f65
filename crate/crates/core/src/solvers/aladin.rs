//! ALADIN: augmented-Lagrangian alternating-direction inexact Newton.
//!
//! Each outer iteration runs four phases:
//!
//! 1. every block solves its local NLP
//!    `min f_i(x) + lambda^T A_i x + (nu/2) ||x - z_i||^2_Sigma` subject to
//!    its own constraints (concurrently, via the execution harness);
//! 2. a positive-definite Lagrangian-Hessian approximation `B_i` is formed
//!    per block;
//! 3. one coupled equality-constrained QP combines all blocks' curvature
//!    with the coupling penalty and is solved exactly through a single
//!    stacked saddle-point solve;
//! 4. the primal iterates take the full QP step (`z_{i,next} = x_i + dx_i`)
//!    and the coupling multiplier takes the ascent step
//!    `lambda_next = lambda + alpha * (sum A_i x_i - b)`.
//!
//! Inequality constraints enter the QP only through the rows found active by
//! the local solves, held as equalities for that iteration.

use super::sqp::{detect_active_set, sqp_solve, ActiveSet, SqpConfig, SqpProblem, SqpStatus};
use super::{SolveError, SolveResult, SolveStatus};
use crate::calculus::{self, ScalarField, VectorField};
use crate::harness::{map_blocks, ExecutionMode};
use crate::kkt::{self, KktSystem};
use crate::problem::{
    stack_blocks, ConvergenceTrace, IterateState, LocalBlock, SeparableProblem, TraceRecord,
};
use nalgebra::{DMatrix, DVector};
use std::time::Instant;

/// How the per-block Hessian approximation `B_i` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianMode {
    /// Second-order central differences of the local Lagrangian.
    ExactFd,
    /// First differences of the analytic objective gradient when a block
    /// carries one (constraint curvature still by differences); falls back
    /// to `ExactFd` otherwise.
    Analytic,
    /// Always eigenvalue-clip the result to the regularization floor.
    Regularized,
}

/// Eigenvalue floor applied to indefinite Hessian approximations.
pub const HESSIAN_REG_DELTA: f64 = 1e-6;

const MAX_ACTIVE_SET_ROUNDS: usize = 12;
const MU_SIGN_TOL: f64 = 1e-8;
const VIOLATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AladinConfig {
    /// Coordination penalty weight.
    pub rho: f64,
    /// Local proximal weight.
    pub nu: f64,
    /// Per-block symmetric positive-definite scaling matrices of the
    /// proximal term; identity when absent.
    pub sigma: Option<Vec<DMatrix<f64>>>,
    /// Dual ascent step size.
    pub alpha: f64,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    /// Activity threshold for inequality constraints.
    pub eps_act: f64,
    pub hessian_mode: HessianMode,
    /// Settings of the local SQP solves.
    pub inner: SqpConfig,
    pub mode: ExecutionMode,
    pub seed: u64,
}

impl Default for AladinConfig {
    fn default() -> Self {
        Self {
            rho: 1e3,
            nu: 1e4,
            sigma: None,
            alpha: 1.0,
            max_iter: 100,
            tol_primal: 1e-8,
            tol_dual: 1e-8,
            eps_act: 1e-6,
            hessian_mode: HessianMode::ExactFd,
            // Local solves use finite-difference Hessians whose noise floor
            // sits near 1e-10 at benchmark scales; 1e-8 keeps a margin.
            inner: SqpConfig { tol: 1e-8, ..SqpConfig::default() },
            mode: ExecutionMode::Sequential,
            seed: 0,
        }
    }
}

impl AladinConfig {
    pub fn validate(&self, p: &SeparableProblem) -> Result<(), SolveError> {
        if self.rho <= 0.0 || self.nu <= 0.0 || self.alpha <= 0.0 {
            return Err(SolveError::InvalidConfig(
                "rho, nu, and alpha must all be positive".into(),
            ));
        }
        if self.max_iter == 0 {
            return Err(SolveError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if self.eps_act < 0.0 {
            return Err(SolveError::InvalidConfig("eps_act must be nonnegative".into()));
        }
        if let Some(sigmas) = &self.sigma {
            if sigmas.len() != p.num_blocks() {
                return Err(SolveError::InvalidConfig(format!(
                    "{} scaling matrices supplied for {} blocks",
                    sigmas.len(),
                    p.num_blocks()
                )));
            }
            for (i, (s, blk)) in sigmas.iter().zip(p.blocks()).enumerate() {
                let n = blk.dim();
                if s.nrows() != n || s.ncols() != n {
                    return Err(SolveError::InvalidConfig(format!(
                        "scaling matrix {i} is {}x{}, block dim is {n}",
                        s.nrows(),
                        s.ncols()
                    )));
                }
                if !kkt::is_positive_semidefinite(s, 1e-10) || kkt::min_eigenvalue(s) <= 0.0 {
                    return Err(SolveError::InvalidConfig(format!(
                        "scaling matrix {i} is not positive definite"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Output of one local NLP step.
#[derive(Debug, Clone)]
pub struct LocalStepResult {
    pub x: DVector<f64>,
    /// Equality multipliers in the `f + gamma^T g` convention.
    pub gamma: DVector<f64>,
    /// Inequality multipliers over all folded rows; zero off the active set.
    pub mu: DVector<f64>,
    /// Active inequality rows detected at the returned point.
    pub active: ActiveSet,
}

fn build_local_sqp(
    block: &LocalBlock,
    lambda: &DVector<f64>,
    z_i: &DVector<f64>,
    sigma: Option<&DMatrix<f64>>,
    nu: f64,
    folded: &Option<VectorField>,
    working: &ActiveSet,
) -> SqpProblem {
    let n = block.dim();
    let atl = block.coupling().transpose() * lambda;
    let sigma_owned = sigma.cloned();
    let z = z_i.clone();
    let objective = {
        let field = block.objective().clone();
        let atl = atl.clone();
        let sigma_owned = sigma_owned.clone();
        let z = z.clone();
        ScalarField::new(n, move |x| {
            let d = x - &z;
            let prox = match &sigma_owned {
                Some(s) => (d.transpose() * s * &d)[(0, 0)],
                None => d.norm_squared(),
            };
            field.eval(x) + atl.dot(x) + 0.5 * nu * prox
        })
    };
    let mut prob = SqpProblem::new(objective);

    // An analytic block gradient extends to the augmented objective exactly.
    if block.has_analytic_gradient() {
        let blk = block.clone();
        let sigma_owned = sigma_owned.clone();
        let z = z.clone();
        prob = prob.with_gradient(move |x| {
            let base = blk
                .objective_gradient(x)
                .expect("analytic gradient cannot fail");
            let d = x - &z;
            let prox_grad = match &sigma_owned {
                Some(s) => s * &d,
                None => d,
            };
            base + &atl + prox_grad * nu
        });
    }

    let eq_rows = block.equalities().map_or(0, |g| g.out_dim());
    let act_rows = working.len();
    if eq_rows + act_rows > 0 {
        let eq = block.equalities().cloned();
        let ineq = folded.clone();
        let act: Vec<usize> = working.indices().to_vec();
        let mut constraints = VectorField::new(n, eq_rows + act_rows, {
            let eq = eq.clone();
            let ineq = ineq.clone();
            let act = act.clone();
            move |x| {
                let mut out = DVector::zeros(eq_rows + act_rows);
                if let Some(g) = &eq {
                    out.rows_mut(0, eq_rows).copy_from(&g.eval(x));
                }
                if let Some(h) = &ineq {
                    let hv = h.eval(x);
                    for (k, &j) in act.iter().enumerate() {
                        out[eq_rows + k] = hv[j];
                    }
                }
                out
            }
        });
        let eq_exact = eq.as_ref().is_none_or(|g| g.has_analytic_jacobian());
        let ineq_exact =
            act_rows == 0 || ineq.as_ref().is_some_and(|h| h.has_analytic_jacobian());
        if eq_exact && ineq_exact {
            constraints = constraints.with_jacobian(move |x| {
                let mut jac = DMatrix::zeros(eq_rows + act_rows, n);
                if let Some(g) = &eq {
                    let jg = g
                        .jacobian(x, calculus::default_gradient_step())
                        .expect("analytic Jacobian cannot fail");
                    jac.view_mut((0, 0), (eq_rows, n)).copy_from(&jg);
                }
                if let Some(h) = &ineq {
                    let jh = h
                        .jacobian(x, calculus::default_gradient_step())
                        .expect("analytic Jacobian cannot fail");
                    for (k, &j) in act.iter().enumerate() {
                        jac.view_mut((eq_rows + k, 0), (1, n)).copy_from(&jh.row(j));
                    }
                }
                jac
            });
        }
        prob = prob.with_constraints(constraints);
    }
    prob
}

/// Solves one block's proximal NLP
/// `min f_i(x) + lambda^T A_i x + (nu/2) ||x - z_i||^2_Sigma` subject to
/// `g_i(x) = 0`, `h_i(x) <= 0`, returning a KKT point, its multipliers in
/// the `f + gamma^T g + mu^T h` convention, and the active set at the
/// solution.
///
/// Inequalities are handled by a detect-then-fix loop around the
/// equality-constrained SQP core: rows active at the current point are held
/// as equalities, rows with negative multipliers are released, and violated
/// rows are added until the working set is stable.
pub fn local_step(
    block: &LocalBlock,
    lambda: &DVector<f64>,
    z_i: &DVector<f64>,
    sigma: Option<&DMatrix<f64>>,
    cfg: &AladinConfig,
) -> Result<LocalStepResult, SolveError> {
    assert_eq!(z_i.len(), block.dim(), "z_i must match the block dimension");
    let folded = block.folded_inequalities();
    let eq_rows = block.equalities().map_or(0, |g| g.out_dim());
    let ineq_rows = folded.as_ref().map_or(0, |h| h.out_dim());

    let mut x = z_i.clone();
    let mut working = match &folded {
        Some(h) => detect_active_set(h, &x, cfg.eps_act),
        None => ActiveSet::default(),
    };
    // The equality-constrained core admits at most dim constraints; keep the
    // working set within capacity, preferring the most violated rows.
    let capacity = block.dim().saturating_sub(eq_rows);
    let cap_working = |set: ActiveSet, h: &Option<VectorField>, x: &DVector<f64>| -> ActiveSet {
        if set.len() <= capacity {
            return set;
        }
        let hv = h.as_ref().expect("rows imply inequalities").eval(x);
        let mut ranked: Vec<usize> = set.indices().to_vec();
        ranked.sort_by(|&a, &b| hv[b].partial_cmp(&hv[a]).unwrap_or(std::cmp::Ordering::Equal));
        ranked.truncate(capacity);
        ActiveSet::new(ranked)
    };
    working = cap_working(working, &folded, &x);

    for _round in 0..MAX_ACTIVE_SET_ROUNDS {
        let prob = build_local_sqp(block, lambda, z_i, sigma, cfg.nu, &folded, &working);
        let mults0 = DVector::zeros(eq_rows + working.len());
        // Newton floors at machine precision relative to the problem scale,
        // so the absolute tolerance is widened by the initial KKT violation.
        let mut inner_cfg = cfg.inner.clone();
        let initial = super::sqp::kkt_residual(&prob, &x, &mults0)?;
        inner_cfg.tol = cfg.inner.tol * (1.0 + initial.norm());
        let sol = sqp_solve(&prob, x.clone(), mults0, &inner_cfg)?;
        if sol.status != SqpStatus::Converged {
            return Err(SolveError::SqpNonConvergence {
                iterations: sol.trace.iterations(),
                residual: sol.residual,
            });
        }
        x = sol.x;
        // SQP multipliers follow the minus convention; flip them.
        let gamma = -sol.lambda.rows(0, eq_rows).into_owned();
        let mu_w = -sol.lambda.rows(eq_rows, working.len()).into_owned();

        // Release the most negative working constraint, if any.
        let mut worst: Option<(usize, f64)> = None;
        for (k, &j) in working.indices().iter().enumerate() {
            if mu_w[k] < -MU_SIGN_TOL && worst.is_none_or(|(_, v)| mu_w[k] < v) {
                worst = Some((j, mu_w[k]));
            }
        }
        if let Some((j, _)) = worst {
            let keep: Vec<usize> =
                working.indices().iter().copied().filter(|&i| i != j).collect();
            working = ActiveSet::new(keep);
            continue;
        }

        // Add violated rows outside the working set.
        if let Some(h) = &folded {
            let hv = h.eval(&x);
            let mut extended: Vec<usize> = working.indices().to_vec();
            let mut grew = false;
            for j in 0..ineq_rows {
                if !working.contains(j) && hv[j] > VIOLATION_TOL {
                    extended.push(j);
                    grew = true;
                }
            }
            if grew {
                working = cap_working(ActiveSet::new(extended), &folded, &x);
                continue;
            }
        }

        // Stable working set: assemble the full multiplier vector.
        let mut mu = DVector::zeros(ineq_rows);
        for (k, &j) in working.indices().iter().enumerate() {
            mu[j] = mu_w[k].max(0.0);
        }
        let active = match &folded {
            Some(h) => detect_active_set(h, &x, cfg.eps_act),
            None => ActiveSet::default(),
        };
        return Ok(LocalStepResult { x, gamma, mu, active });
    }
    Err(SolveError::SqpNonConvergence { iterations: MAX_ACTIVE_SET_ROUNDS, residual: f64::NAN })
}

/// Positive-definite approximation of the block Lagrangian Hessian
/// `hess(f_i + gamma^T g_i + mu^T h_i)`, eigenvalue-clipped to
/// [`HESSIAN_REG_DELTA`] when indefinite (always, in `Regularized` mode).
pub fn hessian_approx(
    block: &LocalBlock,
    x_i: &DVector<f64>,
    gamma_i: &DVector<f64>,
    mu_i: &DVector<f64>,
    cfg: &AladinConfig,
) -> Result<DMatrix<f64>, SolveError> {
    let n = block.dim();
    let folded = block.folded_inequalities();
    if let Some(g) = block.equalities() {
        assert_eq!(gamma_i.len(), g.out_dim(), "gamma length mismatch");
    }
    if let Some(h) = &folded {
        assert_eq!(mu_i.len(), h.out_dim(), "mu length mismatch");
    }

    let constraint_part = |x: &DVector<f64>| -> Result<Option<DMatrix<f64>>, SolveError> {
        let eq = block.equalities().cloned();
        let ineq = folded.clone();
        if eq.is_none() && ineq.is_none() {
            return Ok(None);
        }
        let gamma = gamma_i.clone();
        let mu = mu_i.clone();
        let field = ScalarField::new(n, move |v| {
            let mut val = 0.0;
            if let Some(g) = &eq {
                val += gamma.dot(&g.eval(v));
            }
            if let Some(h) = &ineq {
                val += mu.dot(&h.eval(v));
            }
            val
        });
        Ok(Some(calculus::fd_hessian(&field, x, calculus::default_hessian_step())?))
    };

    let mut hess = match cfg.hessian_mode {
        HessianMode::Analytic if block.has_analytic_gradient() => {
            let blk = block.clone();
            let grad_field = VectorField::new(n, n, move |v| {
                blk.objective_gradient(v).expect("analytic gradient cannot fail")
            });
            let jac = calculus::fd_jacobian(&grad_field, x_i, calculus::default_gradient_step())?;
            let mut h = (&jac + jac.transpose()) * 0.5;
            if let Some(cp) = constraint_part(x_i)? {
                h += cp;
            }
            h
        }
        _ => {
            let lagrangian = {
                let field = block.objective().clone();
                let eq = block.equalities().cloned();
                let ineq = folded.clone();
                let gamma = gamma_i.clone();
                let mu = mu_i.clone();
                ScalarField::new(n, move |v| {
                    let mut val = field.eval(v);
                    if let Some(g) = &eq {
                        val += gamma.dot(&g.eval(v));
                    }
                    if let Some(h) = &ineq {
                        val += mu.dot(&h.eval(v));
                    }
                    val
                })
            };
            calculus::fd_hessian(&lagrangian, x_i, calculus::default_hessian_step())?
        }
    };

    let needs_clip = cfg.hessian_mode == HessianMode::Regularized
        || kkt::min_eigenvalue(&hess) < HESSIAN_REG_DELTA;
    if needs_clip {
        hess = kkt::regularize_spd(&hess, HESSIAN_REG_DELTA);
    }
    Ok(hess)
}

/// One block's contribution to the coordination QP.
#[derive(Debug, Clone)]
pub struct CoordinationBlock {
    /// Positive-definite curvature `B_i`.
    pub hessian: DMatrix<f64>,
    /// Objective gradient at the linearization point.
    pub gradient: DVector<f64>,
    /// Jacobian of the active linearized constraints (may have zero rows).
    pub jacobian: DMatrix<f64>,
    /// Constraint values at the linearization point.
    pub cvals: DVector<f64>,
    /// Coupling contribution `A_i`.
    pub coupling: DMatrix<f64>,
    /// Linearization point.
    pub x: DVector<f64>,
}

/// The coupled equality-constrained QP of one outer iteration.
#[derive(Debug, Clone)]
pub struct CoordinationQp {
    blocks: Vec<CoordinationBlock>,
    lambda: DVector<f64>,
    b: DVector<f64>,
    rho: f64,
}

impl CoordinationQp {
    pub fn new(
        blocks: Vec<CoordinationBlock>,
        lambda: DVector<f64>,
        b: DVector<f64>,
        rho: f64,
    ) -> Result<Self, SolveError> {
        if rho <= 0.0 {
            return Err(SolveError::InvalidConfig("coordination rho must be positive".into()));
        }
        let m_c = b.len();
        if lambda.len() != m_c {
            return Err(SolveError::InvalidConfig(format!(
                "lambda has length {}, coupling rhs has {m_c}",
                lambda.len()
            )));
        }
        for (i, blk) in blocks.iter().enumerate() {
            let n = blk.x.len();
            if blk.hessian.nrows() != n || blk.hessian.ncols() != n {
                return Err(SolveError::InvalidConfig(format!(
                    "coordination block {i}: Hessian shape mismatch"
                )));
            }
            if blk.hessian.clone().cholesky().is_none() {
                return Err(SolveError::InvalidConfig(format!(
                    "coordination block {i}: Hessian is not positive definite"
                )));
            }
            if blk.gradient.len() != n
                || blk.jacobian.ncols() != n
                || blk.jacobian.nrows() != blk.cvals.len()
                || blk.coupling.nrows() != m_c
                || blk.coupling.ncols() != n
            {
                return Err(SolveError::InvalidConfig(format!(
                    "coordination block {i}: inconsistent shapes"
                )));
            }
        }
        Ok(Self { blocks, lambda, b, rho })
    }

    pub fn blocks(&self) -> &[CoordinationBlock] {
        &self.blocks
    }
}

/// Solves the coordination QP through one stacked saddle-point solve,
/// returning the per-block steps and the QP's coupling multiplier.
///
/// The QP minimizes
/// `sum_i [ 0.5 dx_i^T B_i dx_i + grad_i^T dx_i ] + lambda^T sum_i A_i (x_i + dx_i)
///  + (rho/2) || sum_i A_i (x_i + dx_i) - b ||^2`
/// subject to the linearized active constraints `c_i + J_i dx_i = 0`.
///
/// The coupling multiplier is carried as an explicit unknown so the whole
/// problem stays one symmetric indefinite system.
pub fn coordination_step(
    qp: &CoordinationQp,
) -> Result<(Vec<DVector<f64>>, DVector<f64>), SolveError> {
    let m_c = qp.b.len();
    let dims: Vec<usize> = qp.blocks.iter().map(|b| b.x.len()).collect();
    let n_tot: usize = dims.iter().sum();
    let m_loc: usize = qp.blocks.iter().map(|b| b.cvals.len()).sum();

    // Current coupling residual at the linearization points.
    let mut r = -qp.b.clone();
    for blk in &qp.blocks {
        r += &blk.coupling * &blk.x;
    }

    // Extended primal unknown u = (dx_1, ..., dx_R, lambda_qp).
    let dim_u = n_tot + m_c;
    let mut h = DMatrix::zeros(dim_u, dim_u);
    let mut rhs_top = DVector::zeros(dim_u);
    let mut offset = 0;
    for blk in &qp.blocks {
        let n = blk.x.len();
        h.view_mut((offset, offset), (n, n)).copy_from(&blk.hessian);
        if m_c > 0 {
            h.view_mut((offset, n_tot), (n, m_c)).copy_from(&blk.coupling.transpose());
            h.view_mut((n_tot, offset), (m_c, n)).copy_from(&blk.coupling);
        }
        rhs_top.rows_mut(offset, n).copy_from(&(-&blk.gradient));
        offset += n;
    }
    for i in 0..m_c {
        h[(n_tot + i, n_tot + i)] = -1.0 / qp.rho;
        rhs_top[n_tot + i] = -qp.lambda[i] / qp.rho - r[i];
    }

    let mut jac = DMatrix::zeros(m_loc, dim_u);
    let mut rhs_bottom = DVector::zeros(m_loc);
    let mut row = 0;
    offset = 0;
    for blk in &qp.blocks {
        let (mi, n) = (blk.cvals.len(), blk.x.len());
        if mi > 0 {
            jac.view_mut((row, offset), (mi, n)).copy_from(&blk.jacobian);
            rhs_bottom.rows_mut(row, mi).copy_from(&(-&blk.cvals));
            row += mi;
        }
        offset += n;
    }

    let sys = KktSystem::new(h, jac.clone(), rhs_top, rhs_bottom)?;
    let u = match kkt::solve_kkt(&sys) {
        Ok((u, _mults)) => u,
        Err(kkt::KktError::Singular { dim, estimated_rank, cond_estimate }) => {
            // Distinguish inconsistent linearized constraints from a merely
            // rank-deficient saddle point.
            if m_loc > 0 {
                let mut c_all = DVector::zeros(m_loc);
                let mut row = 0;
                for blk in &qp.blocks {
                    c_all.rows_mut(row, blk.cvals.len()).copy_from(&blk.cvals);
                    row += blk.cvals.len();
                }
                let svd = jac.clone().svd(true, true);
                let scale = svd.singular_values.max();
                let rank = svd
                    .singular_values
                    .iter()
                    .filter(|&&s| s > scale * 1e-12 * m_loc as f64)
                    .count();
                if rank < m_loc {
                    if let Ok(ls) = svd.solve(&(-&c_all), scale * 1e-12) {
                        let res = (&jac * ls + &c_all).norm();
                        if res > 1e-8 * (1.0 + c_all.norm()) {
                            return Err(SolveError::CoordinationInfeasible { iteration: 0 });
                        }
                    }
                }
            }
            return Err(SolveError::Kkt(kkt::KktError::Singular {
                dim,
                estimated_rank,
                cond_estimate,
            }));
        }
        Err(e) => return Err(e.into()),
    };

    let mut deltas = Vec::with_capacity(qp.blocks.len());
    let mut off = 0;
    for &n in &dims {
        deltas.push(u.rows(off, n).into_owned());
        off += n;
    }
    let lambda_qp = u.rows(n_tot, m_c).into_owned();
    Ok((deltas, lambda_qp))
}

/// Dual ascent step `lambda + alpha * residual`.
pub fn dual_update(lambda: &DVector<f64>, alpha: f64, residual: &DVector<f64>) -> DVector<f64> {
    assert!(alpha > 0.0, "alpha must be positive");
    lambda + residual * alpha
}

fn coupling_stationarity(
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

/// Runs the ALADIN outer loop. `init` seeds the auxiliary iterates `z`, the
/// primal `x`, and the multiplier; zeros otherwise.
///
/// The trace `dual_res` column records the total local-step displacement
/// `||x_loc - z||` (how far the blocks moved off the coordination iterate),
/// which vanishes at a fixed point.
pub fn run_aladin(
    p: &SeparableProblem,
    cfg: &AladinConfig,
    init: Option<&IterateState>,
) -> Result<SolveResult, SolveError> {
    cfg.validate(p)?;
    let mut state = match init {
        Some(s) => s.clone(),
        None => IterateState::zeros(p),
    };
    state.validate(p)?;

    let start = Instant::now();
    let mut trace = ConvergenceTrace::new();
    let r0 = p.coupling_residual(&state.x)?;
    let s0 = coupling_stationarity(p, &state.x, &state.lambda)?;
    trace.push(TraceRecord {
        iter: 0,
        objective: p.total_objective(&state.x)?,
        primal_res: r0.norm(),
        dual_res: s0,
        step_norm: 0.0,
        seconds: start.elapsed().as_secs_f64(),
    });
    if r0.norm() <= cfg.tol_primal && s0 <= cfg.tol_dual {
        return Ok(SolveResult { state, trace, status: SolveStatus::Converged });
    }

    let mut status = SolveStatus::MaxIter;
    for k in 1..=cfg.max_iter {
        // (1) Concurrent local steps against the (lambda, z) snapshot.
        let lambda_snap = state.lambda.clone();
        let tasks: Vec<_> = p
            .blocks()
            .iter()
            .enumerate()
            .map(|(i, blk)| {
                let z_i = state.z[i].clone();
                let sigma_i = cfg.sigma.as_ref().map(|s| s[i].clone());
                let lambda = lambda_snap.clone();
                move || local_step(blk, &lambda, &z_i, sigma_i.as_ref(), cfg)
            })
            .collect();
        let (outcome, _) = map_blocks(tasks, &cfg.mode);
        let locals = match outcome {
            Ok(v) => v,
            Err(failures) => {
                let (block, err) = failures.failures.into_iter().next().expect("nonempty");
                return Err(SolveError::BlockFailure {
                    block,
                    iteration: k,
                    message: err.to_string(),
                });
            }
        };

        // (2) Curvature approximations and (3) the coordination QP.
        let mut qp_blocks = Vec::with_capacity(p.num_blocks());
        for (i, (blk, loc)) in p.blocks().iter().zip(&locals).enumerate() {
            let b_i = hessian_approx(blk, &loc.x, &loc.gamma, &loc.mu, cfg).map_err(|e| {
                SolveError::BlockFailure { block: i, iteration: k, message: e.to_string() }
            })?;
            let (jacobian, cvals) = active_linearization(blk, &loc.x, &loc.active)?;
            let gradient = blk.objective_gradient(&loc.x)?;
            qp_blocks.push(CoordinationBlock {
                hessian: b_i,
                gradient,
                jacobian,
                cvals,
                coupling: blk.coupling().clone(),
                x: loc.x.clone(),
            });
        }
        let qp = CoordinationQp::new(qp_blocks, lambda_snap.clone(), p.coupling_rhs().clone(), cfg.rho)?;
        let (deltas, _lambda_qp) = coordination_step(&qp).map_err(|e| match e {
            SolveError::CoordinationInfeasible { .. } => {
                SolveError::CoordinationInfeasible { iteration: k }
            }
            other => other,
        })?;

        // (4) Full QP step and dual ascent.
        let x_new: Vec<DVector<f64>> =
            locals.iter().zip(&deltas).map(|(loc, d)| &loc.x + d).collect();
        let r = p.coupling_residual(&x_new)?;
        let lambda_next = dual_update(&lambda_snap, cfg.alpha, &r);

        let local_shift = locals
            .iter()
            .zip(&state.z)
            .map(|(loc, z)| (&loc.x - z).norm_squared())
            .sum::<f64>()
            .sqrt();
        let prev_stacked = state.stacked_x();
        let new_stacked = stack_blocks(&x_new);
        let step = (&new_stacked - &prev_stacked).norm();

        state.z = x_new.clone();
        state.x = x_new;
        state.lambda = lambda_next;
        state.gamma = locals.iter().map(|l| l.gamma.clone()).collect();
        state.mu = locals.iter().map(|l| l.mu.clone()).collect();

        trace.push(TraceRecord {
            iter: k,
            objective: p.total_objective(&state.x)?,
            primal_res: r.norm(),
            dual_res: local_shift,
            step_norm: step,
            seconds: start.elapsed().as_secs_f64(),
        });
        if r.norm() <= cfg.tol_primal && step <= cfg.tol_dual * (1.0 + prev_stacked.norm()) {
            status = SolveStatus::Converged;
            break;
        }
    }
    Ok(SolveResult { state, trace, status })
}

/// Jacobian and values of the equality constraints plus the active
/// inequality rows at `x`, in that row order.
fn active_linearization(
    blk: &LocalBlock,
    x: &DVector<f64>,
    active: &ActiveSet,
) -> Result<(DMatrix<f64>, DVector<f64>), SolveError> {
    let n = blk.dim();
    let eq_rows = blk.equalities().map_or(0, |g| g.out_dim());
    let act_rows = active.len();
    let total = eq_rows + act_rows;
    let mut jac = DMatrix::zeros(total, n);
    let mut vals = DVector::zeros(total);
    if let Some(g) = blk.equalities() {
        let jg = g.jacobian(x, calculus::default_gradient_step())?;
        jac.view_mut((0, 0), (eq_rows, n)).copy_from(&jg);
        vals.rows_mut(0, eq_rows).copy_from(&g.eval(x));
    }
    if act_rows > 0 {
        let h = blk.folded_inequalities().expect("active rows imply inequalities");
        let jh = h.jacobian(x, calculus::default_gradient_step())?;
        let hv = h.eval(x);
        for (k, &j) in active.indices().iter().enumerate() {
            jac.view_mut((eq_rows + k, 0), (1, n)).copy_from(&jh.row(j));
            vals[eq_rows + k] = hv[j];
        }
    }
    Ok((jac, vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn scalar_block(coupling: DMatrix<f64>) -> LocalBlock {
        let f = ScalarField::new(1, |x| 0.5 * x[0] * x[0]);
        LocalBlock::new(f).with_gradient(|x| x.clone()).with_coupling(coupling)
    }

    fn test_cfg() -> AladinConfig {
        AladinConfig { nu: 1.0, rho: 10.0, alpha: 10.0, ..Default::default() }
    }

    #[test]
    fn local_step_unconstrained_origin() {
        // f = x^2/2, lambda = 0, z = 0: both terms minimized at 0.
        let blk = scalar_block(dmatrix![1.0]);
        let cfg = test_cfg();
        let res = local_step(&blk, &dvector![0.0], &dvector![0.0], None, &cfg).unwrap();
        assert!(res.x[0].abs() < 1e-9);
        assert!(res.active.is_empty());
    }

    #[test]
    fn local_step_prox_pull() {
        // stationarity: x + (x - 2) = 0 -> x = 1.
        let blk = scalar_block(dmatrix![1.0]);
        let cfg = test_cfg();
        let res = local_step(&blk, &dvector![0.0], &dvector![2.0], None, &cfg).unwrap();
        assert!((res.x[0] - 1.0).abs() < 1e-9, "x = {}", res.x[0]);
    }

    #[test]
    fn local_step_lambda_pull() {
        // stationarity: x + 1 + (x - 0) = 0 -> x = -1/2.
        let blk = scalar_block(dmatrix![1.0]);
        let cfg = test_cfg();
        let res = local_step(&blk, &dvector![1.0], &dvector![0.0], None, &cfg).unwrap();
        assert!((res.x[0] + 0.5).abs() < 1e-9, "x = {}", res.x[0]);
    }

    #[test]
    fn local_step_respects_active_bound() {
        // min x^2/2 + nu/2 (x - 2)^2 with x <= 0.5: unconstrained argmin is 1,
        // so the bound binds and mu > 0.
        let f = ScalarField::new(1, |x| 0.5 * x[0] * x[0]);
        let blk = LocalBlock::new(f)
            .with_gradient(|x| x.clone())
            .with_coupling(dmatrix![1.0])
            .with_bounds(dvector![f64::NEG_INFINITY], dvector![0.5]);
        let cfg = test_cfg();
        let res = local_step(&blk, &dvector![0.0], &dvector![2.0], None, &cfg).unwrap();
        assert!((res.x[0] - 0.5).abs() < 1e-8, "x = {}", res.x[0]);
        assert_eq!(res.active.indices(), &[0]);
        assert!(res.mu[0] > 0.0);
    }

    #[test]
    fn hessian_approx_identity_for_quadratic() {
        let f = ScalarField::new(2, |x| 0.5 * x.norm_squared());
        let blk = LocalBlock::new(f).with_coupling(DMatrix::zeros(0, 2));
        let cfg = test_cfg();
        let h = hessian_approx(&blk, &dvector![0.3, -0.7], &dvector![], &dvector![], &cfg)
            .unwrap();
        assert!((h - DMatrix::identity(2, 2)).abs().max() < 1e-6);
    }

    #[test]
    fn hessian_approx_clips_constraint_curvature() {
        // f linear, g(x) = x0^2 - 1 with gamma = 1: Hessian 2 e0 e0^T is
        // singular, so the flat direction is lifted to the floor.
        let f = ScalarField::new(2, |x| x[0] + x[1]);
        let g = VectorField::new(2, 1, |x| dvector![x[0] * x[0] - 1.0]);
        let blk = LocalBlock::new(f).with_equalities(g).with_coupling(DMatrix::zeros(0, 2));
        let cfg = test_cfg();
        let h =
            hessian_approx(&blk, &dvector![0.5, 0.5], &dvector![1.0], &dvector![], &cfg).unwrap();
        let eigs = h.symmetric_eigenvalues();
        assert!((eigs.max() - 2.0).abs() < 1e-4, "eigs = {eigs:?}");
        assert!((eigs.min() - HESSIAN_REG_DELTA).abs() < 1e-7, "eigs = {eigs:?}");
    }

    #[test]
    fn hessian_approx_analytic_mode_differentiates_gradient() {
        // Differencing the analytic gradient of a quadratic reproduces its
        // Hessian to first-difference accuracy.
        let q = dmatrix![3.0, 0.5; 0.5, 2.0];
        let f = {
            let q = q.clone();
            ScalarField::new(2, move |x| (0.5 * x.transpose() * &q * x)[(0, 0)])
        };
        let blk = LocalBlock::new(f)
            .with_gradient({
                let q = q.clone();
                move |x| &q * x
            })
            .with_coupling(DMatrix::zeros(0, 2));
        let cfg = AladinConfig { hessian_mode: HessianMode::Analytic, ..test_cfg() };
        let h = hessian_approx(&blk, &dvector![0.4, -1.0], &dvector![], &dvector![], &cfg)
            .unwrap();
        assert!((h - q).abs().max() < 1e-8);
    }

    #[test]
    fn hessian_approx_regularized_mode_always_clips() {
        let f = ScalarField::new(1, |x| x[0] * x[0]);
        let blk = LocalBlock::new(f).with_coupling(DMatrix::zeros(0, 1));
        let cfg = AladinConfig { hessian_mode: HessianMode::Regularized, ..test_cfg() };
        let h = hessian_approx(&blk, &dvector![0.0], &dvector![], &dvector![], &cfg).unwrap();
        // Already positive definite, so clipping leaves it unchanged.
        assert!((h[(0, 0)] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn hessian_approx_clips_indefinite() {
        let f = ScalarField::new(2, |x| -0.5 * x[0] * x[0] + x[1] * x[1]);
        let blk = LocalBlock::new(f).with_coupling(DMatrix::zeros(0, 2));
        let cfg = test_cfg();
        let h = hessian_approx(&blk, &dvector![0.0, 0.0], &dvector![], &dvector![], &cfg)
            .unwrap();
        let eigs = h.symmetric_eigenvalues();
        assert!((eigs.min() - HESSIAN_REG_DELTA).abs() < 1e-7);
        assert!((eigs.max() - 2.0).abs() < 1e-4);
    }

    #[test]
    fn coordination_zero_at_stationary_feasible_point() {
        let mk = |x: f64| CoordinationBlock {
            hessian: dmatrix![1.0],
            gradient: dvector![0.0],
            jacobian: DMatrix::zeros(0, 1),
            cvals: dvector![],
            coupling: dmatrix![1.0],
            x: dvector![x],
        };
        // x = (1, -1) is coupling-feasible for b = 0.
        let qp = CoordinationQp::new(
            vec![mk(1.0), mk(-1.0)],
            dvector![0.0],
            dvector![0.0],
            1e3,
        )
        .unwrap();
        let (deltas, lambda_qp) = coordination_step(&qp).unwrap();
        assert!(deltas[0].norm() < 1e-10);
        assert!(deltas[1].norm() < 1e-10);
        assert!(lambda_qp.norm() < 1e-10);
    }

    #[test]
    fn coordination_splits_residual_at_large_rho() {
        let mk = |x: f64| CoordinationBlock {
            hessian: dmatrix![1.0],
            gradient: dvector![0.0],
            jacobian: DMatrix::zeros(0, 1),
            cvals: dvector![],
            coupling: dmatrix![1.0],
            x: dvector![x],
        };
        let qp = CoordinationQp::new(
            vec![mk(1.0), mk(0.0)],
            dvector![0.0],
            dvector![0.0],
            1e9,
        )
        .unwrap();
        let (deltas, _) = coordination_step(&qp).unwrap();
        assert!((deltas[0][0] + 0.5).abs() < 1e-6, "d0 = {}", deltas[0][0]);
        assert!((deltas[1][0] + 0.5).abs() < 1e-6, "d1 = {}", deltas[1][0]);
    }

    #[test]
    fn coordination_back_substitution_is_exact() {
        // Substituting the solution back into the QP stationarity system must
        // reproduce the right-hand side.
        let blocks = vec![
            CoordinationBlock {
                hessian: dmatrix![2.0, 0.3; 0.3, 1.0],
                gradient: dvector![0.4, -1.0],
                jacobian: dmatrix![1.0, 1.0],
                cvals: dvector![0.2],
                coupling: dmatrix![1.0, 0.0],
                x: dvector![0.5, -0.5],
            },
            CoordinationBlock {
                hessian: dmatrix![1.5],
                gradient: dvector![0.1],
                jacobian: DMatrix::zeros(0, 1),
                cvals: dvector![],
                coupling: dmatrix![-1.0],
                x: dvector![0.3],
            },
        ];
        let lambda = dvector![0.7];
        let b = dvector![0.1];
        let rho = 50.0;
        let qp = CoordinationQp::new(blocks.clone(), lambda.clone(), b.clone(), rho).unwrap();
        let (deltas, lambda_qp) = coordination_step(&qp).unwrap();

        // lambda_qp = lambda + rho * (r + sum A_i dx_i).
        let mut r = -b;
        for blk in &blocks {
            r += &blk.coupling * &blk.x;
        }
        let mut coupled = r.clone();
        for (blk, d) in blocks.iter().zip(&deltas) {
            coupled += &blk.coupling * d;
        }
        let expect_lambda = &lambda + coupled * rho;
        assert!((&lambda_qp - expect_lambda).norm() < 1e-8);

        // Block stationarity: B dx + grad + A^T lambda_qp - J^T mult = 0;
        // with the constraint rows enforcing J dx = -c.
        let blk = &blocks[0];
        let lhs = &blk.jacobian * &deltas[0] + &blk.cvals;
        assert!(lhs.norm() < 1e-10, "constraint violated: {}", lhs.norm());
        let blk1 = &blocks[1];
        let stat1 = &blk1.hessian * &deltas[1] + &blk1.gradient + blk1.coupling.transpose() * &lambda_qp;
        assert!(stat1.norm() < 1e-9, "stationarity: {}", stat1.norm());

        // Full back-substitution: recover the constrained block's multiplier
        // by least squares and check the whole stationarity row vanishes.
        let s = &blk.hessian * &deltas[0] + &blk.gradient + blk.coupling.transpose() * &lambda_qp;
        let jt = blk.jacobian.transpose();
        let gram = &blk.jacobian * &jt;
        let mult = gram.lu().solve(&(&blk.jacobian * &s)).unwrap();
        let scale = 1.0 + s.norm();
        assert!(
            (&jt * mult - s).norm() / scale < 1e-10,
            "block 0 stationarity does not close"
        );
    }

    #[test]
    fn coordination_rejects_inconsistent_rows() {
        let blocks = vec![CoordinationBlock {
            hessian: dmatrix![1.0, 0.0; 0.0, 1.0],
            gradient: dvector![0.0, 0.0],
            // Two parallel rows demanding different values.
            jacobian: dmatrix![1.0, 0.0; 1.0, 0.0],
            cvals: dvector![0.0, 1.0],
            coupling: DMatrix::zeros(0, 2),
            x: dvector![0.0, 0.0],
        }];
        let qp = CoordinationQp::new(blocks, dvector![], dvector![], 10.0).unwrap();
        assert!(matches!(
            coordination_step(&qp),
            Err(SolveError::CoordinationInfeasible { .. })
        ));
    }

    #[test]
    fn dual_update_examples() {
        assert_eq!(
            dual_update(&dvector![0.5], 1.0, &dvector![0.0]),
            dvector![0.5]
        );
        assert_eq!(dual_update(&dvector![0.0], 1.0, &dvector![2.0]), dvector![2.0]);
        assert_eq!(
            dual_update(&dvector![1.0, -1.0], 0.5, &dvector![2.0, 4.0]),
            dvector![2.0, 1.0]
        );
    }

    #[test]
    fn aladin_consensus_quadratics() {
        // Two blocks (x - c_i)^2 with pairwise consensus coupling; the
        // consensus value is the mean of the centers.
        let mk = |c: f64, a: DMatrix<f64>| {
            let f = ScalarField::new(1, move |x| (x[0] - c) * (x[0] - c));
            LocalBlock::new(f)
                .with_gradient(move |x| dvector![2.0 * (x[0] - c)])
                .with_coupling(a)
        };
        let p = SeparableProblem::new(
            vec![mk(1.0, dmatrix![1.0]), mk(3.0, dmatrix![-1.0])],
            dvector![0.0],
        )
        .unwrap();
        let cfg = AladinConfig {
            rho: 10.0,
            nu: 1.0,
            alpha: 10.0,
            tol_primal: 1e-10,
            tol_dual: 1e-10,
            ..Default::default()
        };
        let res = run_aladin(&p, &cfg, None).unwrap();
        assert_eq!(res.status, SolveStatus::Converged);
        assert!((res.state.x[0][0] - 2.0).abs() < 1e-6, "x0 = {}", res.state.x[0][0]);
        assert!((res.state.x[1][0] - 2.0).abs() < 1e-6, "x1 = {}", res.state.x[1][0]);
    }

    #[test]
    fn aladin_matches_mom_on_random_quadratics() {
        use crate::solvers::first_order::method_of_multipliers;
        use crate::solvers::SolverConfig;
        let mut rng = crate::rng::Rng64::new(7);
        for trial in 0..5 {
            let nblocks = 2 + (rng.next_u64() % 2) as usize;
            let m_c = 1 + (rng.next_u64() % 2) as usize;
            let mut blocks = Vec::new();
            for _ in 0..nblocks {
                let n = 1 + (rng.next_u64() % 3) as usize;
                let m = DMatrix::from_fn(n, n, |_, _| rng.uniform_in(-0.5, 0.5));
                let q = &m * m.transpose() + DMatrix::identity(n, n);
                let lin = DVector::from_fn(n, |_, _| rng.uniform_in(-1.0, 1.0));
                let a = DMatrix::from_fn(m_c, n, |_, _| rng.uniform_in(-0.5, 0.5));
                let f = {
                    let q = q.clone();
                    let lin = lin.clone();
                    ScalarField::new(n, move |x| (0.5 * x.transpose() * &q * x)[(0, 0)] + lin.dot(x))
                };
                blocks.push(
                    LocalBlock::new(f)
                        .with_gradient({
                            let q = q.clone();
                            let lin = lin.clone();
                            move |x| &q * x + &lin
                        })
                        .with_coupling(a),
                );
            }
            let b = DVector::from_fn(m_c, |_, _| rng.uniform_in(-1.0, 1.0));
            let p = SeparableProblem::new(blocks, b).unwrap();

            let acfg = AladinConfig {
                rho: 50.0,
                nu: 1.0,
                alpha: 50.0,
                max_iter: 300,
                tol_primal: 1e-9,
                tol_dual: 1e-9,
                ..Default::default()
            };
            let ares = run_aladin(&p, &acfg, None).unwrap();
            assert_eq!(ares.status, SolveStatus::Converged, "trial {trial}");

            let mcfg = SolverConfig {
                rho: 50.0,
                max_iter: 300,
                tol_primal: 1e-9,
                tol_dual: 1e-9,
                ..Default::default()
            };
            let mres = method_of_multipliers(&p, &mcfg, None).unwrap();
            assert_eq!(mres.status, SolveStatus::Converged, "trial {trial}");

            for (xa, xm) in ares.state.x.iter().zip(&mres.state.x) {
                assert!((xa - xm).norm() < 1e-5, "trial {trial}: {xa:?} vs {xm:?}");
            }
            assert!((&ares.state.lambda - &mres.state.lambda).norm() < 1e-5, "trial {trial}");
        }
    }

    #[test]
    fn aladin_trace_identical_across_modes() {
        let scene = crate::benchmarks::gen_sensor_scene(5, 0.5, 11).unwrap();
        let p = crate::benchmarks::gen_sensor_problem(&scene).unwrap();
        let z0 = crate::benchmarks::sensor_start_values(&scene);
        let mut init = IterateState::zeros(&p);
        init.x = z0.clone();
        init.z = z0;
        let mut cfg = AladinConfig { alpha: 1e3, max_iter: 20, ..Default::default() };
        cfg.tol_primal = 1e-6;
        cfg.tol_dual = 1e-6;
        let seq = run_aladin(&p, &cfg, Some(&init)).unwrap();
        cfg.mode = ExecutionMode::Concurrent { workers: 3 };
        let conc = run_aladin(&p, &cfg, Some(&init)).unwrap();
        assert!(seq.trace.same_numeric_path(&conc.trace));
        for (a, b) in seq.state.x.iter().zip(&conc.state.x) {
            for (u, v) in a.iter().zip(b.iter()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn aladin_local_step_stationarity_invariant() {
        // The local NLP KKT residual at every local_step output must be small.
        let blk = scalar_block(dmatrix![1.0]);
        let cfg = test_cfg();
        for (lam, z) in [(0.0, 0.0), (1.0, 2.0), (-0.7, 0.3)] {
            let res = local_step(&blk, &dvector![lam], &dvector![z], None, &cfg).unwrap();
            // gradient of f + lambda x + nu/2 (x-z)^2 at the solution:
            let grad = res.x[0] + lam + cfg.nu * (res.x[0] - z);
            assert!(grad.abs() <= cfg.inner.tol * 10.0, "stationarity {grad}");
        }
    }
}
