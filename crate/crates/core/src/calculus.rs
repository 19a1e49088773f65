//! Finite-difference differential operators, a scalar Newton–Raphson root
//! finder, and norm utilities.
//!
//! All derivative approximations use central differences. The per-coordinate
//! step is `h * (1 + |x_j|)`, so the caller-supplied width acts as a relative
//! step for large coordinates and an absolute one near zero. Suitable default
//! widths are [`default_gradient_step`] (eps^(1/3)) for first derivatives and
//! [`default_hessian_step`] (eps^(1/4)) for second derivatives.

use nalgebra::{DMatrix, DVector};
use std::sync::Arc;
use thiserror::Error;

pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// A scalar-valued function of a real vector, `f : R^n -> R`.
///
/// Evaluation must be deterministic for a fixed point; the solvers rely on
/// this for reproducible traces.
#[derive(Clone)]
pub struct ScalarField {
    dim: usize,
    f: ScalarFn,
}

impl ScalarField {
    pub fn new<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        assert!(dim > 0, "ScalarField dimension must be positive");
        Self { dim, f: Arc::new(f) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        debug_assert_eq!(x.len(), self.dim, "point length does not match field dim");
        (self.f)(x)
    }
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarField").field("dim", &self.dim).finish()
    }
}

/// A vector-valued function of a real vector, `F : R^n -> R^m`, with an
/// optional analytic Jacobian. Solvers prefer the analytic Jacobian and fall
/// back to central differences.
#[derive(Clone)]
pub struct VectorField {
    in_dim: usize,
    out_dim: usize,
    f: VectorFn,
    jac: Option<MatrixFn>,
}

impl VectorField {
    pub fn new<F>(in_dim: usize, out_dim: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        assert!(in_dim > 0, "VectorField input dimension must be positive");
        Self { in_dim, out_dim, f: Arc::new(f), jac: None }
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jac = Some(Arc::new(jac));
        self
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let out = (self.f)(x);
        assert_eq!(out.len(), self.out_dim, "VectorField output length mismatch");
        out
    }

    /// Analytic Jacobian when present, [`fd_jacobian`] with step `h`
    /// otherwise.
    pub fn jacobian(&self, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>, CalculusError> {
        match &self.jac {
            Some(j) => {
                let out = j(x);
                assert_eq!(
                    (out.nrows(), out.ncols()),
                    (self.out_dim, self.in_dim),
                    "analytic Jacobian shape mismatch"
                );
                Ok(out)
            }
            None => fd_jacobian(self, x, h),
        }
    }
}

impl std::fmt::Debug for VectorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorField")
            .field("in_dim", &self.in_dim)
            .field("out_dim", &self.out_dim)
            .finish()
    }
}

#[derive(Debug, Error)]
pub enum CalculusError {
    /// The function returned NaN or infinity at a finite-difference stencil
    /// point. `coord` is the coordinate being perturbed.
    #[error("non-finite value at finite-difference stencil (coordinate {coord}, value {value})")]
    NonFiniteEval { coord: usize, value: f64 },

    #[error("derivative magnitude {derivative:.3e} below floor {floor:.3e} at x = {at}")]
    SingularDerivative { at: f64, derivative: f64, floor: f64 },

    #[error("Newton-Raphson did not converge in {max_iter} iterations (last x = {last_iterate}, |f| = {residual:.3e})")]
    NonConvergence { max_iter: usize, last_iterate: f64, residual: f64 },

    #[error("matrix is not positive semidefinite (quadratic form {quad_form:.3e})")]
    NotPsd { quad_form: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Default relative step width for first-derivative central differences.
pub fn default_gradient_step() -> f64 {
    f64::EPSILON.cbrt()
}

/// Default relative step width for second-derivative central differences.
pub fn default_hessian_step() -> f64 {
    f64::EPSILON.powf(0.25)
}

fn check_finite(value: f64, coord: usize) -> Result<f64, CalculusError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(CalculusError::NonFiniteEval { coord, value })
    }
}

/// Central-difference gradient of `f` at `x`.
///
/// Coordinate `j` is perturbed by `h * (1 + |x_j|)`.
pub fn fd_gradient(
    f: &ScalarField,
    x: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>, CalculusError> {
    assert!(h > 0.0, "step width must be positive");
    if x.len() != f.dim() {
        return Err(CalculusError::Dimension(format!(
            "point length {} does not match field dim {}",
            x.len(),
            f.dim()
        )));
    }
    let n = x.len();
    let mut grad = DVector::zeros(n);
    let mut xp = x.clone();
    for j in 0..n {
        let step = h * (1.0 + x[j].abs());
        xp[j] = x[j] + step;
        let fp = check_finite(f.eval(&xp), j)?;
        xp[j] = x[j] - step;
        let fm = check_finite(f.eval(&xp), j)?;
        xp[j] = x[j];
        grad[j] = (fp - fm) / (2.0 * step);
    }
    Ok(grad)
}

/// Central-difference Jacobian of `F` at `x`, shape `out_dim x in_dim`.
///
/// Row `i` equals the central-difference gradient of component `i`.
pub fn fd_jacobian(
    f: &VectorField,
    x: &DVector<f64>,
    h: f64,
) -> Result<DMatrix<f64>, CalculusError> {
    assert!(h > 0.0, "step width must be positive");
    if x.len() != f.in_dim() {
        return Err(CalculusError::Dimension(format!(
            "point length {} does not match field in_dim {}",
            x.len(),
            f.in_dim()
        )));
    }
    let n = f.in_dim();
    let m = f.out_dim();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.clone();
    for j in 0..n {
        let step = h * (1.0 + x[j].abs());
        xp[j] = x[j] + step;
        let fp = f.eval(&xp);
        xp[j] = x[j] - step;
        let fm = f.eval(&xp);
        xp[j] = x[j];
        for i in 0..m {
            let d = (fp[i] - fm[i]) / (2.0 * step);
            if !d.is_finite() {
                return Err(CalculusError::NonFiniteEval { coord: j, value: d });
            }
            jac[(i, j)] = d;
        }
    }
    Ok(jac)
}

/// Second-order central-difference Hessian of `f` at `x`, symmetrized as
/// `(H + H^T) / 2`.
pub fn fd_hessian(
    f: &ScalarField,
    x: &DVector<f64>,
    h: f64,
) -> Result<DMatrix<f64>, CalculusError> {
    assert!(h > 0.0, "step width must be positive");
    if x.len() != f.dim() {
        return Err(CalculusError::Dimension(format!(
            "point length {} does not match field dim {}",
            x.len(),
            f.dim()
        )));
    }
    let n = x.len();
    let f0 = check_finite(f.eval(x), 0)?;
    let steps: Vec<f64> = (0..n).map(|j| h * (1.0 + x[j].abs())).collect();
    let mut hess = DMatrix::zeros(n, n);
    let mut xp = x.clone();

    for i in 0..n {
        xp[i] = x[i] + steps[i];
        let fp = check_finite(f.eval(&xp), i)?;
        xp[i] = x[i] - steps[i];
        let fm = check_finite(f.eval(&xp), i)?;
        xp[i] = x[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (steps[i] * steps[i]);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            xp[i] = x[i] + steps[i];
            xp[j] = x[j] + steps[j];
            let fpp = check_finite(f.eval(&xp), j)?;
            xp[j] = x[j] - steps[j];
            let fpm = check_finite(f.eval(&xp), j)?;
            xp[i] = x[i] - steps[i];
            xp[j] = x[j] + steps[j];
            let fmp = check_finite(f.eval(&xp), j)?;
            xp[j] = x[j] - steps[j];
            let fmm = check_finite(f.eval(&xp), j)?;
            xp[i] = x[i];
            xp[j] = x[j];
            let d = (fpp - fpm - fmp + fmm) / (4.0 * steps[i] * steps[j]);
            hess[(i, j)] = d;
            hess[(j, i)] = d;
        }
    }
    // Exact symmetry even under roundoff in the diagonal passes.
    let sym = (&hess + hess.transpose()) * 0.5;
    Ok(sym)
}

/// Derivative magnitude below which the Newton step is considered singular.
pub const NEWTON_DERIVATIVE_FLOOR: f64 = 1e-12;

/// Scalar Newton-Raphson: iterates `x <- x - f(x) / df(x)` until
/// `|f(x)| <= tol`.
pub fn newton_raphson<F, D>(
    f: F,
    df: D,
    x0: f64,
    tol: f64,
    max_iter: usize,
) -> Result<f64, CalculusError>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    assert!(tol > 0.0, "tolerance must be positive");
    assert!(max_iter >= 1, "max_iter must be at least 1");
    let mut x = x0;
    for _ in 0..max_iter {
        let fx = f(x);
        let dfx = df(x);
        // The update divides by the derivative, so a vanishing derivative is
        // flagged even when the residual happens to be small (double roots).
        if dfx.abs() < NEWTON_DERIVATIVE_FLOOR {
            return Err(CalculusError::SingularDerivative {
                at: x,
                derivative: dfx,
                floor: NEWTON_DERIVATIVE_FLOOR,
            });
        }
        if fx.abs() <= tol {
            return Ok(x);
        }
        x -= fx / dfx;
    }
    let residual = f(x).abs();
    if residual <= tol {
        Ok(x)
    } else {
        Err(CalculusError::NonConvergence { max_iter, last_iterate: x, residual })
    }
}

/// Weighted norm `sqrt(x^T Sigma x)` for a symmetric positive-semidefinite
/// `Sigma`. With `Sigma = I` this is the L2 norm.
pub fn weighted_norm(x: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64, CalculusError> {
    let n = x.len();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(CalculusError::Dimension(format!(
            "Sigma is {}x{}, expected {}x{}",
            sigma.nrows(),
            sigma.ncols(),
            n,
            n
        )));
    }
    let asym = (sigma - sigma.transpose()).abs().max();
    if asym > 1e-10 * (1.0 + sigma.abs().max()) {
        return Err(CalculusError::Dimension("Sigma is not symmetric".into()));
    }
    let quad = (x.transpose() * sigma * x)[(0, 0)];
    let tol = 1e-10 * (1.0 + x.norm_squared() * sigma.abs().max());
    if quad < -tol {
        return Err(CalculusError::NotPsd { quad_form: quad });
    }
    Ok(quad.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn gradient_of_quadratic() {
        let f = ScalarField::new(2, |x| x[0] * x[0] + x[1] * x[1]);
        let g = fd_gradient(&f, &dvector![1.0, 2.0], default_gradient_step()).unwrap();
        assert!(close(g[0], 2.0, 1e-6), "g0 = {}", g[0]);
        assert!(close(g[1], 4.0, 1e-6), "g1 = {}", g[1]);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let f = ScalarField::new(3, |_| 7.5);
        let g = fd_gradient(&f, &dvector![0.3, -1.0, 2.0], default_gradient_step()).unwrap();
        assert_eq!(g, dvector![0.0, 0.0, 0.0]);
    }

    #[test]
    fn gradient_of_sin_product() {
        // d/dx1 sin(x1) x2 = cos(x1) x2 = 3 at (0, 3); d/dx2 = sin(0) = 0.
        let f = ScalarField::new(2, |x| x[0].sin() * x[1]);
        let g = fd_gradient(&f, &dvector![0.0, 3.0], 1e-6).unwrap();
        assert!(close(g[0], 3.0, 1e-5), "g0 = {}", g[0]);
        assert!(close(g[1], 0.0, 1e-5), "g1 = {}", g[1]);
    }

    #[test]
    fn gradient_reports_non_finite_stencil() {
        let f = ScalarField::new(1, |x| x[0].ln());
        let err = fd_gradient(&f, &dvector![0.0], 1e-7).unwrap_err();
        match err {
            CalculusError::NonFiniteEval { coord, .. } => assert_eq!(coord, 0),
            other => panic!("expected NonFiniteEval, got {other:?}"),
        }
    }

    #[test]
    fn jacobian_of_linear_map() {
        let f = VectorField::new(2, 2, |x| dvector![x[0] + x[1], x[0] - x[1]]);
        let j = fd_jacobian(&f, &dvector![0.7, -2.2], default_gradient_step()).unwrap();
        let expected = nalgebra::dmatrix![1.0, 1.0; 1.0, -1.0];
        assert!((j - expected).abs().max() < 1e-8);
    }

    #[test]
    fn jacobian_of_identity() {
        let f = VectorField::new(3, 3, |x| x.clone());
        let j = fd_jacobian(&f, &dvector![1.0, 2.0, 3.0], default_gradient_step()).unwrap();
        assert!((j - DMatrix::identity(3, 3)).abs().max() < 1e-9);
    }

    #[test]
    fn jacobian_hand_differentiated() {
        // F(x) = (x1 x2, x1^2) at (2, 3): [[3, 2], [4, 0]].
        let f = VectorField::new(2, 2, |x| dvector![x[0] * x[1], x[0] * x[0]]);
        let j = fd_jacobian(&f, &dvector![2.0, 3.0], default_gradient_step()).unwrap();
        let expected = nalgebra::dmatrix![3.0, 2.0; 4.0, 0.0];
        assert!((j - expected).abs().max() < 1e-5);
    }

    #[test]
    fn hessian_of_quadratic() {
        let f = ScalarField::new(2, |x| x[0] * x[0] + x[1] * x[1]);
        let h = fd_hessian(&f, &dvector![0.4, -1.3], default_hessian_step()).unwrap();
        assert!((h - DMatrix::identity(2, 2) * 2.0).abs().max() < 1e-4);
    }

    #[test]
    fn hessian_of_linear_is_zero() {
        let f = ScalarField::new(2, |x| 3.0 * x[0] - 0.5 * x[1]);
        let h = fd_hessian(&f, &dvector![1.0, 1.0], default_hessian_step()).unwrap();
        assert!(h.abs().max() < 1e-6, "max = {}", h.abs().max());
    }

    #[test]
    fn hessian_hand_differentiated() {
        // f(x) = x1^2 x2 at (1, 2): [[2 x2, 2 x1], [2 x1, 0]] = [[4, 2], [2, 0]].
        let f = ScalarField::new(2, |x| x[0] * x[0] * x[1]);
        let h = fd_hessian(&f, &dvector![1.0, 2.0], default_hessian_step()).unwrap();
        let expected = nalgebra::dmatrix![4.0, 2.0; 2.0, 0.0];
        assert!((&h - expected).abs().max() < 1e-3);
        assert_eq!(h[(0, 1)], h[(1, 0)], "post-symmetrization must be exact");
    }

    #[test]
    fn hessian_is_exactly_symmetric() {
        let f = ScalarField::new(3, |x| (x[0] * x[1]).sin() * x[2].exp() + x[0].powi(3));
        let h = fd_hessian(&f, &dvector![0.3, -0.7, 0.2], default_hessian_step()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(h[(i, j)], h[(j, i)]);
            }
        }
    }

    #[test]
    fn newton_sqrt2() {
        let root = newton_raphson(|x| x * x - 2.0, |x| 2.0 * x, 1.0, 1e-10, 50).unwrap();
        assert!(close(root, std::f64::consts::SQRT_2, 1e-10));
    }

    #[test]
    fn newton_single_step_value() {
        // x1 = 1 - (1 - 2) / 2 = 1.5; one iteration cannot reach tol so the
        // error carries the iterate.
        let err = newton_raphson(|x| x * x - 2.0, |x| 2.0 * x, 1.0, 1e-10, 1).unwrap_err();
        match err {
            CalculusError::NonConvergence { last_iterate, .. } => {
                assert_eq!(last_iterate, 1.5);
            }
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn newton_singular_derivative() {
        let err = newton_raphson(|x| x * x, |x| 2.0 * x, 0.0, 1e-10, 50).unwrap_err();
        assert!(matches!(err, CalculusError::SingularDerivative { .. }));
    }

    #[test]
    fn newton_family_converges_quickly() {
        for a in [2.0, 3.0, 5.0] {
            let root = newton_raphson(|x| x * x - a, |x| 2.0 * x, a, 1e-10, 20).unwrap();
            assert!((root * root - a).abs() < 1e-10, "a = {a}");
        }
    }

    #[test]
    fn weighted_norm_identity_is_l2() {
        let x = dvector![3.0, 4.0];
        let n = weighted_norm(&x, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(n, 5.0);
    }

    #[test]
    fn weighted_norm_zero_vector() {
        let x = DVector::zeros(3);
        let sigma = DMatrix::from_diagonal(&dvector![1.0, 4.0, 0.25]);
        assert_eq!(weighted_norm(&x, &sigma).unwrap(), 0.0);
    }

    #[test]
    fn weighted_norm_diagonal() {
        let x = dvector![1.0, 1.0];
        let sigma = DMatrix::from_diagonal(&dvector![4.0, 9.0]);
        assert!(close(weighted_norm(&x, &sigma).unwrap(), 13.0_f64.sqrt(), 1e-14));
    }

    #[test]
    fn weighted_norm_rejects_indefinite() {
        let x = dvector![1.0, -1.0];
        // Eigenvalues 3 and -1; x picks up the negative direction.
        let sigma = nalgebra::dmatrix![1.0, 2.0; 2.0, 1.0];
        assert!(matches!(
            weighted_norm(&x, &sigma),
            Err(CalculusError::NotPsd { .. })
        ));
    }
}
