//! Equality-constrained SQP: Newton iteration on the KKT conditions of
//! `min f(x) s.t. c(x) = 0`.
//!
//! Sign convention here follows the Lagrangian `L(x, lambda) = f(x) -
//! lambda^T c(x)`, so the KKT residual is `(grad f - A(x)^T lambda, c(x))`
//! with `A(x)` the constraint Jacobian. Plain Newton, no line search; when
//! the Lagrangian Hessian fails the tangent-space curvature test it is
//! replaced by its eigenvalue-clipped positive-definite approximation.

use super::SolveError;
use crate::calculus::{self, ScalarField, VectorField};
use crate::kkt::{self, KktSystem};
use crate::problem::{ConvergenceTrace, GradientFn, TraceRecord};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;
use std::time::Instant;

/// Tolerances of one SQP solve.
#[derive(Debug, Clone)]
pub struct SqpConfig {
    /// Convergence threshold on the KKT residual norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Eigenvalue floor used when the Hessian fails the curvature test.
    pub reg_delta: f64,
}

impl Default for SqpConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50, reg_delta: 1e-6 }
    }
}

pub type JacobianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type LagrangianHessianFn =
    Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// `min f(x) s.t. c(x) = 0` with optional analytic derivatives; finite
/// differences fill the gaps.
#[derive(Clone)]
pub struct SqpProblem {
    f: ScalarField,
    grad_f: Option<GradientFn>,
    c: Option<VectorField>,
    jac_c: Option<JacobianFn>,
    hess_l: Option<LagrangianHessianFn>,
}

impl SqpProblem {
    pub fn new(f: ScalarField) -> Self {
        Self { f, grad_f: None, c: None, jac_c: None, hess_l: None }
    }

    /// Attaches equality constraints; the row count must not exceed the
    /// primal dimension.
    pub fn with_constraints(mut self, c: VectorField) -> Self {
        assert_eq!(c.in_dim(), self.f.dim(), "constraint input dim must match objective");
        assert!(
            c.out_dim() <= self.f.dim(),
            "more equality constraints than variables (m = {}, n = {})",
            c.out_dim(),
            self.f.dim()
        );
        self.c = Some(c);
        self
    }

    pub fn with_gradient<G>(mut self, g: G) -> Self
    where
        G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.grad_f = Some(Arc::new(g));
        self
    }

    pub fn with_constraint_jacobian<J>(mut self, j: J) -> Self
    where
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jac_c = Some(Arc::new(j));
        self
    }

    pub fn with_lagrangian_hessian<H>(mut self, h: H) -> Self
    where
        H: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.hess_l = Some(Arc::new(h));
        self
    }

    pub fn n(&self) -> usize {
        self.f.dim()
    }

    pub fn m(&self) -> usize {
        self.c.as_ref().map_or(0, |c| c.out_dim())
    }

    pub fn objective(&self) -> &ScalarField {
        &self.f
    }

    pub fn objective_value(&self, x: &DVector<f64>) -> f64 {
        self.f.eval(x)
    }

    pub fn objective_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
        match &self.grad_f {
            Some(g) => Ok(g(x)),
            None => Ok(calculus::fd_gradient(&self.f, x, calculus::default_gradient_step())?),
        }
    }

    pub fn constraint_values(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.c {
            Some(c) => c.eval(x),
            None => DVector::zeros(0),
        }
    }

    pub fn constraint_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, SolveError> {
        match (&self.jac_c, &self.c) {
            (Some(j), _) => Ok(j(x)),
            (None, Some(c)) => Ok(c.jacobian(x, calculus::default_gradient_step())?),
            (None, None) => Ok(DMatrix::zeros(0, self.n())),
        }
    }

    /// Hessian of `f(x) - lambda^T c(x)`; finite differences on the scalar
    /// Lagrangian unless an analytic closure was supplied.
    pub fn lagrangian_hessian(
        &self,
        x: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> Result<DMatrix<f64>, SolveError> {
        if let Some(h) = &self.hess_l {
            return Ok(h(x, lambda));
        }
        let fcopy = self.f.clone();
        let ccopy = self.c.clone();
        let lam = lambda.clone();
        let scalar_lagrangian = ScalarField::new(self.n(), move |v| {
            let mut val = fcopy.eval(v);
            if let Some(c) = &ccopy {
                val -= lam.dot(&c.eval(v));
            }
            val
        });
        Ok(calculus::fd_hessian(&scalar_lagrangian, x, calculus::default_hessian_step())?)
    }
}

impl std::fmt::Debug for SqpProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SqpProblem").field("n", &self.n()).field("m", &self.m()).finish()
    }
}

/// Sorted, duplicate-free inequality row indices treated as equalities.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ActiveSet {
    indices: Vec<usize>,
}

impl ActiveSet {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }
}

/// Indices `j` with `h_j(x) >= -eps_act`: constraints at or near their
/// boundary.
pub fn detect_active_set(h: &VectorField, x: &DVector<f64>, eps_act: f64) -> ActiveSet {
    assert!(eps_act >= 0.0, "eps_act must be nonnegative");
    let vals = h.eval(x);
    ActiveSet::new((0..vals.len()).filter(|&j| vals[j] >= -eps_act).collect())
}

/// KKT residual `F(x, lambda) = (grad f(x) - A(x)^T lambda, c(x))`, length
/// `n + m`.
pub fn kkt_residual(
    prob: &SqpProblem,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<DVector<f64>, SolveError> {
    assert_eq!(x.len(), prob.n(), "x has wrong length");
    assert_eq!(lambda.len(), prob.m(), "lambda has wrong length");
    let g = prob.objective_gradient(x)?;
    let cvals = prob.constraint_values(x);
    let mut out = DVector::zeros(prob.n() + prob.m());
    if prob.m() > 0 {
        let a = prob.constraint_jacobian(x)?;
        out.rows_mut(0, prob.n()).copy_from(&(g - a.transpose() * lambda));
        out.rows_mut(prob.n(), prob.m()).copy_from(&cvals);
    } else {
        out.rows_mut(0, prob.n()).copy_from(&g);
    }
    Ok(out)
}

/// One Newton step on the KKT system: returns `(p, lambda_next)`.
///
/// Equivalent to solving the saddle-point system for `(p, p_lambda)` and
/// setting `lambda_next = lambda + p_lambda`.
pub fn sqp_step(
    prob: &SqpProblem,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), SolveError> {
    let h = prob.lagrangian_hessian(x, lambda)?;
    let a = prob.constraint_jacobian(x)?;
    let g = prob.objective_gradient(x)?;
    let c = prob.constraint_values(x);
    let rhs_top = if prob.m() > 0 { -&g + a.transpose() * lambda } else { -&g };
    let sys = KktSystem::new(h, a, rhs_top, -c)?;
    let (p, p_lambda) = kkt::solve_kkt(&sys)?;
    Ok((p, lambda + p_lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqpStatus {
    Converged,
    /// Iteration budget exhausted with the final KKT residual recorded.
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct SqpSolution {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub trace: ConvergenceTrace,
    pub status: SqpStatus,
    /// KKT residual norm at the final iterate.
    pub residual: f64,
    /// Every visited iterate `(x_k, lambda_k)` including the start.
    pub iterates: Vec<(DVector<f64>, DVector<f64>)>,
}

/// Newton iteration on the KKT conditions until `||F(x, lambda)|| <= tol`.
///
/// Before each step the Lagrangian Hessian is tested for positive
/// definiteness on the tangent space of the constraints; on failure it is
/// replaced by `regularize_spd(H, reg_delta)`.
pub fn sqp_solve(
    prob: &SqpProblem,
    x0: DVector<f64>,
    lambda0: DVector<f64>,
    cfg: &SqpConfig,
) -> Result<SqpSolution, SolveError> {
    assert!(cfg.max_iter >= 1, "max_iter must be at least 1");
    let mut x = x0;
    let mut lambda = lambda0;
    let start = Instant::now();
    let mut trace = ConvergenceTrace::new();
    let mut iterates = vec![(x.clone(), lambda.clone())];
    let mut status = SqpStatus::MaxIter;
    let mut residual = f64::INFINITY;
    let mut step_norm = 0.0;

    for k in 0..=cfg.max_iter {
        let res = kkt_residual(prob, &x, &lambda)?;
        residual = res.norm();
        let cnorm = prob.constraint_values(&x).norm();
        let dual = res.rows(0, prob.n()).norm();
        trace.push(TraceRecord {
            iter: k,
            objective: prob.objective_value(&x),
            primal_res: cnorm,
            dual_res: dual,
            step_norm,
            seconds: start.elapsed().as_secs_f64(),
        });
        if residual <= cfg.tol {
            status = SqpStatus::Converged;
            break;
        }
        if k == cfg.max_iter {
            break;
        }

        let mut h = prob.lagrangian_hessian(&x, &lambda)?;
        let a = prob.constraint_jacobian(&x)?;
        h = (&h + h.transpose()) * 0.5;
        let z = nullspace_basis(&a, prob.n());
        let needs_reg = if z.ncols() > 0 {
            let zhz = z.transpose() * &h * &z;
            kkt::min_eigenvalue(&zhz) <= 0.0
        } else {
            false
        };
        if needs_reg {
            h = kkt::regularize_spd(&h, cfg.reg_delta);
        }

        let g = prob.objective_gradient(&x)?;
        let c = prob.constraint_values(&x);
        let rhs_top = if prob.m() > 0 { -&g + a.transpose() * &lambda } else { -&g };
        let sys = KktSystem::new(h.clone(), a.clone(), rhs_top.clone(), -&c)?;
        let (p, p_lambda) = match kkt::solve_kkt(&sys) {
            Ok(sol) => sol,
            Err(kkt::KktError::Singular { .. }) if !needs_reg => {
                // Borderline curvature that passed the eigenvalue test can
                // still produce a numerically singular saddle point.
                let lifted = kkt::regularize_spd(&h, cfg.reg_delta);
                let sys = KktSystem::new(lifted, a, rhs_top, -&c)?;
                kkt::solve_kkt(&sys)?
            }
            Err(e) => return Err(e.into()),
        };
        step_norm = p.norm();
        x += p;
        lambda += p_lambda;
        iterates.push((x.clone(), lambda.clone()));
    }

    Ok(SqpSolution { x, lambda, trace, status, residual, iterates })
}

/// Orthonormal basis of the nullspace of `a` via modified Gram-Schmidt on the
/// rows followed by orthogonalized coordinate vectors. Returns an `n x k`
/// matrix whose columns span `{ d : a d = 0 }`.
fn nullspace_basis(a: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let scale = 1.0 + if a.nrows() > 0 { a.abs().max() } else { 0.0 };
    let mut row_space: Vec<DVector<f64>> = Vec::new();
    for i in 0..a.nrows() {
        let mut v = a.row(i).transpose();
        for _ in 0..2 {
            for b in &row_space {
                let proj = b.dot(&v);
                v -= b * proj;
            }
        }
        if v.norm() > 1e-12 * scale {
            row_space.push(v.normalize());
        }
    }
    let mut null_space: Vec<DVector<f64>> = Vec::new();
    for j in 0..n {
        let mut v = DVector::zeros(n);
        v[j] = 1.0;
        for _ in 0..2 {
            for b in row_space.iter().chain(null_space.iter()) {
                let proj = b.dot(&v);
                v -= b * proj;
            }
        }
        if v.norm() > 1e-10 {
            null_space.push(v.normalize());
        }
    }
    let k = null_space.len();
    let mut z = DMatrix::zeros(n, k);
    for (j, col) in null_space.iter().enumerate() {
        z.set_column(j, col);
    }
    z
}
