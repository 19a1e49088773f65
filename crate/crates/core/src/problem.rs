//! Block-separable problems with affine coupling.
//!
//! A [`SeparableProblem`] is an ordered collection of [`LocalBlock`]s plus the
//! coupling right-hand side `b`: every solver in this crate consumes this one
//! type. Problems are immutable after construction and evaluation is pure, so
//! a problem can be shared freely across solver threads.

use crate::calculus::{self, CalculusError, ScalarField, VectorField};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;
use thiserror::Error;

pub type GradientFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("problem must contain at least one block")]
    Empty,

    #[error("block {block}: {detail}")]
    Dimension { block: usize, detail: String },

    #[error("coupling rhs has length {found}, expected {expected}")]
    CouplingRhs { expected: usize, found: usize },

    #[error("block {block}: objective evaluated to a non-finite value {value}")]
    NonFiniteObjective { block: usize, value: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// One agent's share of the problem: objective `f_i`, local equality and
/// inequality constraints, the coupling contribution `A_i`, and bounds.
#[derive(Clone)]
pub struct LocalBlock {
    objective: ScalarField,
    gradient: Option<GradientFn>,
    equalities: Option<VectorField>,
    inequalities: Option<VectorField>,
    coupling: DMatrix<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl LocalBlock {
    /// A block with the given objective, no constraints, infinite bounds and
    /// an empty (0-row) coupling matrix. Use the `with_*` builders to fill in
    /// the rest.
    pub fn new(objective: ScalarField) -> Self {
        let dim = objective.dim();
        Self {
            objective,
            gradient: None,
            equalities: None,
            inequalities: None,
            coupling: DMatrix::zeros(0, dim),
            lower: DVector::from_element(dim, f64::NEG_INFINITY),
            upper: DVector::from_element(dim, f64::INFINITY),
        }
    }

    pub fn with_gradient<G>(mut self, grad: G) -> Self
    where
        G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(grad));
        self
    }

    pub fn with_equalities(mut self, g: VectorField) -> Self {
        self.equalities = Some(g);
        self
    }

    pub fn with_inequalities(mut self, h: VectorField) -> Self {
        self.inequalities = Some(h);
        self
    }

    pub fn with_coupling(mut self, a: DMatrix<f64>) -> Self {
        self.coupling = a;
        self
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    pub fn objective(&self) -> &ScalarField {
        &self.objective
    }

    pub fn equalities(&self) -> Option<&VectorField> {
        self.equalities.as_ref()
    }

    pub fn raw_inequalities(&self) -> Option<&VectorField> {
        self.inequalities.as_ref()
    }

    pub fn bounds(&self) -> (&DVector<f64>, &DVector<f64>) {
        (&self.lower, &self.upper)
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    /// True when the block carries no local constraints of any kind.
    pub fn is_unconstrained(&self) -> bool {
        self.equalities.is_none()
            && self.inequalities.is_none()
            && self.lower.iter().all(|&l| l == f64::NEG_INFINITY)
            && self.upper.iter().all(|&u| u == f64::INFINITY)
    }

    pub fn objective_value(&self, x: &DVector<f64>) -> f64 {
        self.objective.eval(x)
    }

    /// Analytic gradient when supplied, central differences otherwise.
    pub fn objective_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, CalculusError> {
        match &self.gradient {
            Some(g) => Ok(g(x)),
            None => calculus::fd_gradient(&self.objective, x, calculus::default_gradient_step()),
        }
    }

    /// Inequality constraints with finite bounds folded in as affine rows, so
    /// the active-set machinery sees a single `h_i(x) <= 0` pathway. Row
    /// order: user rows, then upper bounds (`x_j - ub_j`), then lower bounds
    /// (`lb_j - x_j`), each in coordinate order. When the user rows carry an
    /// analytic Jacobian (or are absent), the folded field does too.
    pub fn folded_inequalities(&self) -> Option<VectorField> {
        let dim = self.dim();
        let ub_rows: Vec<usize> =
            (0..dim).filter(|&j| self.upper[j] != f64::INFINITY).collect();
        let lb_rows: Vec<usize> =
            (0..dim).filter(|&j| self.lower[j] != f64::NEG_INFINITY).collect();
        let user = self.inequalities.clone();
        let user_rows = user.as_ref().map_or(0, |h| h.out_dim());
        let total = user_rows + ub_rows.len() + lb_rows.len();
        if total == 0 {
            return None;
        }
        let upper = self.upper.clone();
        let lower = self.lower.clone();
        let mut field = VectorField::new(dim, total, {
            let user = user.clone();
            let ub_rows = ub_rows.clone();
            let lb_rows = lb_rows.clone();
            move |x| {
                let mut out = DVector::zeros(total);
                if let Some(h) = &user {
                    out.rows_mut(0, user_rows).copy_from(&h.eval(x));
                }
                for (k, &j) in ub_rows.iter().enumerate() {
                    out[user_rows + k] = x[j] - upper[j];
                }
                for (k, &j) in lb_rows.iter().enumerate() {
                    out[user_rows + ub_rows.len() + k] = lower[j] - x[j];
                }
                out
            }
        });
        if user.as_ref().is_none_or(|h| h.has_analytic_jacobian()) {
            field = field.with_jacobian(move |x| {
                let mut jac = DMatrix::zeros(total, dim);
                if let Some(h) = &user {
                    let ju = h
                        .jacobian(x, crate::calculus::default_gradient_step())
                        .expect("analytic Jacobian cannot fail");
                    jac.view_mut((0, 0), (user_rows, dim)).copy_from(&ju);
                }
                for (k, &j) in ub_rows.iter().enumerate() {
                    jac[(user_rows + k, j)] = 1.0;
                }
                for (k, &j) in lb_rows.iter().enumerate() {
                    jac[(user_rows + ub_rows.len() + k, j)] = -1.0;
                }
                jac
            });
        }
        Some(field)
    }
}

impl std::fmt::Debug for LocalBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalBlock")
            .field("dim", &self.dim())
            .field("coupling_rows", &self.coupling.nrows())
            .field("has_gradient", &self.gradient.is_some())
            .field("eq_rows", &self.equalities.as_ref().map(|g| g.out_dim()))
            .field("ineq_rows", &self.inequalities.as_ref().map(|h| h.out_dim()))
            .finish()
    }
}

/// A validated block-separable problem `min sum f_i(x_i)` subject to local
/// constraints and `sum_i A_i x_i = b`.
#[derive(Debug, Clone)]
pub struct SeparableProblem {
    blocks: Vec<LocalBlock>,
    b: DVector<f64>,
}

impl SeparableProblem {
    /// Builds and validates a problem; every dimension invariant is checked
    /// and violations name the offending block.
    pub fn new(blocks: Vec<LocalBlock>, b: DVector<f64>) -> Result<Self, ProblemError> {
        if blocks.is_empty() {
            return Err(ProblemError::Empty);
        }
        let m_c = b.len();
        for (i, blk) in blocks.iter().enumerate() {
            let n_i = blk.dim();
            if blk.coupling.nrows() != m_c {
                return Err(ProblemError::Dimension {
                    block: i,
                    detail: format!(
                        "coupling matrix has {} rows but b has length {m_c}",
                        blk.coupling.nrows()
                    ),
                });
            }
            if blk.coupling.ncols() != n_i {
                return Err(ProblemError::Dimension {
                    block: i,
                    detail: format!(
                        "coupling matrix has {} columns but block dimension is {n_i}",
                        blk.coupling.ncols()
                    ),
                });
            }
            if blk.lower.len() != n_i || blk.upper.len() != n_i {
                return Err(ProblemError::Dimension {
                    block: i,
                    detail: format!(
                        "bounds have lengths {}/{} but block dimension is {n_i}",
                        blk.lower.len(),
                        blk.upper.len()
                    ),
                });
            }
            if blk.lower.iter().zip(blk.upper.iter()).any(|(l, u)| l > u) {
                return Err(ProblemError::Dimension {
                    block: i,
                    detail: "lower bound exceeds upper bound".into(),
                });
            }
            if let Some(g) = &blk.equalities {
                if g.in_dim() != n_i {
                    return Err(ProblemError::Dimension {
                        block: i,
                        detail: format!(
                            "equality constraints expect input dim {}, block has {n_i}",
                            g.in_dim()
                        ),
                    });
                }
            }
            if let Some(h) = &blk.inequalities {
                if h.in_dim() != n_i {
                    return Err(ProblemError::Dimension {
                        block: i,
                        detail: format!(
                            "inequality constraints expect input dim {}, block has {n_i}",
                            h.in_dim()
                        ),
                    });
                }
            }
        }
        Ok(Self { blocks, b })
    }

    pub fn blocks(&self) -> &[LocalBlock] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn coupling_rhs(&self) -> &DVector<f64> {
        &self.b
    }

    /// Number of coupling rows `m_c`.
    pub fn coupling_rows(&self) -> usize {
        self.b.len()
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(|blk| blk.dim()).sum()
    }

    fn check_primal_shapes(&self, x: &[DVector<f64>]) -> Result<(), ProblemError> {
        if x.len() != self.blocks.len() {
            return Err(ProblemError::Shape(format!(
                "{} primal vectors supplied for {} blocks",
                x.len(),
                self.blocks.len()
            )));
        }
        for (i, (xi, blk)) in x.iter().zip(&self.blocks).enumerate() {
            if xi.len() != blk.dim() {
                return Err(ProblemError::Dimension {
                    block: i,
                    detail: format!("primal vector length {} != block dim {}", xi.len(), blk.dim()),
                });
            }
        }
        Ok(())
    }

    /// Coupling residual `sum_i A_i x_i - b`, accumulated in block order so
    /// the result is identical regardless of how block results were produced.
    pub fn coupling_residual(&self, x: &[DVector<f64>]) -> Result<DVector<f64>, ProblemError> {
        self.check_primal_shapes(x)?;
        let mut r = -&self.b;
        for (blk, xi) in self.blocks.iter().zip(x) {
            r += &blk.coupling * xi;
        }
        Ok(r)
    }

    /// `sum_i f_i(x_i)`.
    pub fn total_objective(&self, x: &[DVector<f64>]) -> Result<f64, ProblemError> {
        self.check_primal_shapes(x)?;
        let mut total = 0.0;
        for (i, (blk, xi)) in self.blocks.iter().zip(x).enumerate() {
            let v = blk.objective_value(xi);
            if !v.is_finite() {
                return Err(ProblemError::NonFiniteObjective { block: i, value: v });
            }
            total += v;
        }
        Ok(total)
    }

    /// Augmented Lagrangian
    /// `sum f_i(x_i) + lambda^T (sum A_i x_i - b) + (rho/2) ||sum A_i x_i - b||^2`.
    ///
    /// Local feasibility is enforced by the solvers' local steps rather than
    /// by an indicator term here.
    pub fn augmented_lagrangian(
        &self,
        x: &[DVector<f64>],
        lambda: &DVector<f64>,
        rho: f64,
    ) -> Result<f64, ProblemError> {
        assert!(rho >= 0.0, "rho must be nonnegative");
        if lambda.len() != self.coupling_rows() {
            return Err(ProblemError::Shape(format!(
                "lambda length {} != coupling rows {}",
                lambda.len(),
                self.coupling_rows()
            )));
        }
        let f = self.total_objective(x)?;
        let r = self.coupling_residual(x)?;
        Ok(f + lambda.dot(&r) + 0.5 * rho * r.norm_squared())
    }
}

/// Per-block primal and auxiliary iterates plus all multipliers of one solver
/// run. Owned by exactly one solver loop at a time.
#[derive(Debug, Clone)]
pub struct IterateState {
    /// Per-block primal vectors.
    pub x: Vec<DVector<f64>>,
    /// Per-block auxiliary vectors (second iterate; same shapes as `x`).
    pub z: Vec<DVector<f64>>,
    /// Shared coupling multiplier.
    pub lambda: DVector<f64>,
    /// Per-block equality multipliers.
    pub gamma: Vec<DVector<f64>>,
    /// Per-block inequality multipliers; entries are nonnegative.
    pub mu: Vec<DVector<f64>>,
}

impl IterateState {
    /// All-zero state shaped for `problem`.
    pub fn zeros(problem: &SeparableProblem) -> Self {
        let x: Vec<_> = problem.blocks().iter().map(|blk| DVector::zeros(blk.dim())).collect();
        let gamma = problem
            .blocks()
            .iter()
            .map(|blk| DVector::zeros(blk.equalities().map_or(0, |g| g.out_dim())))
            .collect();
        let mu = problem
            .blocks()
            .iter()
            .map(|blk| DVector::zeros(blk.folded_inequalities().map_or(0, |h| h.out_dim())))
            .collect();
        Self {
            z: x.clone(),
            x,
            lambda: DVector::zeros(problem.coupling_rows()),
            gamma,
            mu,
        }
    }

    pub fn validate(&self, problem: &SeparableProblem) -> Result<(), ProblemError> {
        problem.check_primal_shapes(&self.x)?;
        problem.check_primal_shapes(&self.z)?;
        if self.lambda.len() != problem.coupling_rows() {
            return Err(ProblemError::Shape(format!(
                "lambda length {} != coupling rows {}",
                self.lambda.len(),
                problem.coupling_rows()
            )));
        }
        for (i, mu) in self.mu.iter().enumerate() {
            if mu.iter().any(|&m| m < 0.0) {
                return Err(ProblemError::Dimension {
                    block: i,
                    detail: "inequality multiplier is negative".into(),
                });
            }
        }
        Ok(())
    }

    /// Stacks the per-block primals into one vector, in block order.
    pub fn stacked_x(&self) -> DVector<f64> {
        stack_blocks(&self.x)
    }
}

pub fn stack_blocks(parts: &[DVector<f64>]) -> DVector<f64> {
    let total: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(total);
    let mut offset = 0;
    for p in parts {
        out.rows_mut(offset, p.len()).copy_from(p);
        offset += p.len();
    }
    out
}

pub fn unstack_blocks(stacked: &DVector<f64>, dims: &[usize]) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(dims.len());
    let mut offset = 0;
    for &d in dims {
        out.push(stacked.rows(offset, d).into_owned());
        offset += d;
    }
    assert_eq!(offset, stacked.len(), "dims do not cover the stacked vector");
    out
}

/// One per-iteration trace record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    /// Objective-scale quantity; dual-function value for the dual-ascent
    /// family, `sum f_i` otherwise.
    pub objective: f64,
    /// Coupling residual L2 norm.
    pub primal_res: f64,
    /// Stationarity violation L2 norm.
    pub dual_res: f64,
    /// Primal step L2 norm.
    pub step_norm: f64,
    /// Wall-clock seconds since the solve started.
    pub seconds: f64,
}

/// Ordered per-iteration records of one solver run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTrace {
    records: Vec<TraceRecord>,
}

pub const TRACE_CSV_HEADER: &str = "iter,objective,primal_res,dual_res,step_norm,seconds";

impl ConvergenceTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record; indices must increase strictly from 0 and wall time
    /// must be nonnegative.
    pub fn push(&mut self, rec: TraceRecord) {
        if let Some(last) = self.records.last() {
            assert!(rec.iter > last.iter, "trace iterations must increase strictly");
        } else {
            assert_eq!(rec.iter, 0, "trace must start at iteration 0");
        }
        assert!(rec.seconds >= 0.0, "wall-clock seconds must be nonnegative");
        self.records.push(rec);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of update iterations performed (records minus the initial one).
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iter)
    }

    /// True when the algorithmic fields (everything except wall time) agree
    /// bitwise with `other`. Wall time is excluded because it is the one
    /// field that legitimately differs between repeated runs.
    pub fn same_numeric_path(&self, other: &Self) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.iter == b.iter
                    && a.objective.to_bits() == b.objective.to_bits()
                    && a.primal_res.to_bits() == b.primal_res.to_bits()
                    && a.dual_res.to_bits() == b.dual_res.to_bits()
                    && a.step_norm.to_bits() == b.step_norm.to_bits()
            })
    }

    /// Writes the trace as CSV. With `include_seconds = false` the seconds
    /// column is written as 0, which keeps the file bytewise reproducible for
    /// a fixed seed.
    pub fn write_csv<W: std::io::Write>(
        &self,
        w: &mut W,
        include_seconds: bool,
    ) -> std::io::Result<()> {
        writeln!(w, "{TRACE_CSV_HEADER}")?;
        for r in &self.records {
            let secs = if include_seconds { r.seconds } else { 0.0 };
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.iter, r.objective, r.primal_res, r.dual_res, r.step_norm, secs
            )?;
        }
        Ok(())
    }
}
