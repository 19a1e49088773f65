//! Dense saddle-point (KKT) assembly and solution, plus positive-definiteness
//! utilities.
//!
//! The systems solved here have the symmetric indefinite block form
//!
//! ```text
//! [ H  -A^T ] [ p        ]   [ rhs_top    ]
//! [ A    0  ] [ p_lambda ] = [ rhs_bottom ]
//! ```
//!
//! which is the Newton system of an equality-constrained problem: `H` plays
//! the Lagrangian-Hessian role and `A` the constraint-Jacobian role. Problem
//! sizes in this crate stay small enough that a dense LU factorization with
//! partial pivoting is exact and fast; singularity is flagged through a pivot
//! based condition estimate rather than silently returning garbage.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Condition-estimate threshold above which the factorization is treated as
/// numerically singular.
pub const SINGULARITY_COND_LIMIT: f64 = 1e12;

#[derive(Debug, Error)]
pub enum KktError {
    #[error(
        "KKT matrix is singular or numerically rank-deficient \
         (dim {dim}, estimated rank {estimated_rank}, condition estimate {cond_estimate:.3e})"
    )]
    Singular { dim: usize, estimated_rank: usize, cond_estimate: f64 },

    #[error("H block is not symmetric (max asymmetry {max_asymmetry:.3e})")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// One saddle-point system `[[H, -A^T], [A, 0]] [p; p_lambda] = [rhs_top; rhs_bottom]`.
#[derive(Debug, Clone)]
pub struct KktSystem {
    h: DMatrix<f64>,
    a: DMatrix<f64>,
    rhs_top: DVector<f64>,
    rhs_bottom: DVector<f64>,
}

impl KktSystem {
    /// Validates shapes and symmetry of `H` (to 1e-10, relative to its largest
    /// entry).
    pub fn new(
        h: DMatrix<f64>,
        a: DMatrix<f64>,
        rhs_top: DVector<f64>,
        rhs_bottom: DVector<f64>,
    ) -> Result<Self, KktError> {
        let n = h.nrows();
        if h.ncols() != n {
            return Err(KktError::Shape(format!("H is {}x{}, must be square", h.nrows(), h.ncols())));
        }
        if rhs_top.len() != n {
            return Err(KktError::Shape(format!(
                "rhs_top length {} does not match H size {n}",
                rhs_top.len()
            )));
        }
        if a.ncols() != n && a.nrows() > 0 {
            return Err(KktError::Shape(format!(
                "A has {} columns, expected {n}",
                a.ncols()
            )));
        }
        if a.nrows() != rhs_bottom.len() {
            return Err(KktError::Shape(format!(
                "A has {} rows but rhs_bottom has length {}",
                a.nrows(),
                rhs_bottom.len()
            )));
        }
        let max_asym = if n > 0 { (&h - h.transpose()).abs().max() } else { 0.0 };
        let scale = 1.0_f64.max(h.abs().max());
        if max_asym > 1e-10 * scale {
            return Err(KktError::NotSymmetric { max_asymmetry: max_asym });
        }
        Ok(Self { h, a, rhs_top, rhs_bottom })
    }

    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    fn assemble(&self) -> DMatrix<f64> {
        let n = self.n();
        let m = self.m();
        let mut k = DMatrix::zeros(n + m, n + m);
        k.view_mut((0, 0), (n, n)).copy_from(&self.h);
        if m > 0 {
            k.view_mut((0, n), (n, m)).copy_from(&(-self.a.transpose()));
            k.view_mut((n, 0), (m, n)).copy_from(&self.a);
        }
        k
    }
}

/// Solves the saddle-point system, returning `(p, p_lambda)`.
///
/// The system must be non-singular, which holds when `A` has full row rank
/// and `H` is positive definite on the nullspace of `A`.
pub fn solve_kkt(sys: &KktSystem) -> Result<(DVector<f64>, DVector<f64>), KktError> {
    let n = sys.n();
    let m = sys.m();
    let dim = n + m;
    let k = sys.assemble();

    let lu = k.clone().lu();
    let u = lu.u();
    let mut max_piv = 0.0_f64;
    let mut min_piv = f64::INFINITY;
    for i in 0..dim {
        let p = u[(i, i)].abs();
        max_piv = max_piv.max(p);
        min_piv = min_piv.min(p);
    }
    let rank_tol = max_piv * f64::EPSILON * dim as f64;
    let estimated_rank = (0..dim).filter(|&i| u[(i, i)].abs() > rank_tol).count();
    let cond_estimate = if min_piv > 0.0 { max_piv / min_piv } else { f64::INFINITY };
    if max_piv == 0.0 || min_piv == 0.0 || cond_estimate > SINGULARITY_COND_LIMIT {
        return Err(KktError::Singular { dim, estimated_rank, cond_estimate });
    }

    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&sys.rhs_top);
    if m > 0 {
        rhs.rows_mut(n, m).copy_from(&sys.rhs_bottom);
    }
    let sol = lu
        .solve(&rhs)
        .ok_or(KktError::Singular { dim, estimated_rank, cond_estimate })?;
    Ok((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
}

/// Clips every eigenvalue of the symmetric matrix `h` up to at least `delta`,
/// returning a positive-definite matrix. Directions with adequate curvature
/// are left untouched.
pub fn regularize_spd(h: &DMatrix<f64>, delta: f64) -> DMatrix<f64> {
    assert!(delta > 0.0, "delta must be positive");
    assert_eq!(h.nrows(), h.ncols(), "matrix must be square");
    let sym = (h + h.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let clipped = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(delta)),
    );
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

/// True iff `m` is symmetric within `tol` and its smallest eigenvalue is at
/// least `-tol`.
pub fn is_positive_semidefinite(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    if m.nrows() == 0 {
        return true;
    }
    if (m - m.transpose()).abs().max() > tol {
        return false;
    }
    let sym = (m + m.transpose()) * 0.5;
    let eigvals = sym.symmetric_eigenvalues();
    eigvals.min() >= -tol
}

/// Smallest eigenvalue of the symmetrized matrix. Helper shared by the
/// solvers' curvature tests.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    assert_eq!(m.nrows(), m.ncols());
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}
