//! Property tests for the numeric kernels: saddle-point back-substitution,
//! eigenvalue clipping, norm identities, the augmented-Lagrangian
//! decomposition, and problem-validation fuzzing.

use distopt::calculus::{weighted_norm, ScalarField};
use distopt::kkt::{is_positive_semidefinite, regularize_spd, solve_kkt, KktSystem};
use distopt::problem::{LocalBlock, ProblemError, SeparableProblem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn vec_strategy(len: usize, range: f64) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-range..range, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Substituting the saddle-point solution back into the block system
    /// reproduces the right-hand side.
    #[test]
    fn kkt_back_substitution(
        n in 1usize..=8,
        m_raw in 0usize..=4,
        seed_vals in vec_strategy(8 * 8 + 4 * 8 + 12, 1.0),
    ) {
        let m = m_raw.min(n.saturating_sub(0)).min(n);
        let mut it = seed_vals.into_iter();
        let mut next = || it.next().unwrap_or(0.37);
        let mm = DMatrix::from_fn(n, n, |_, _| next());
        let h = &mm * mm.transpose() + DMatrix::identity(n, n);
        let a = DMatrix::from_fn(m, n, |_, _| next());
        // Full row rank is required; skip degenerate draws.
        if m > 0 {
            let svd = a.clone().svd(false, false);
            prop_assume!(svd.singular_values.min() > 1e-3);
        }
        let rhs_top = DVector::from_fn(n, |_, _| next());
        let rhs_bottom = DVector::from_fn(m, |_, _| next());
        let sys = KktSystem::new(h.clone(), a.clone(), rhs_top.clone(), rhs_bottom.clone()).unwrap();
        let (p, pl) = solve_kkt(&sys).unwrap();

        let top = &h * &p - a.transpose() * &pl;
        let bottom = &a * &p;
        let scale = 1.0 + rhs_top.norm() + rhs_bottom.norm();
        prop_assert!((top - rhs_top).norm() / scale < 1e-10);
        prop_assert!((bottom - rhs_bottom).norm() / scale < 1e-10);
    }

    /// The clipped matrix dominates `delta` in every direction.
    #[test]
    fn regularize_spd_quadratic_form(
        n in 1usize..=6,
        vals in vec_strategy(36, 2.0),
        vecs in vec_strategy(6 * 100, 1.0),
        delta in 1e-6f64..1.0,
    ) {
        let mut it = vals.into_iter();
        let raw = DMatrix::from_fn(n, n, |_, _| it.next().unwrap_or(0.1));
        let sym = (&raw + raw.transpose()) * 0.5;
        let out = regularize_spd(&sym, delta);
        prop_assert!(is_positive_semidefinite(&out, 1e-9));
        let mut vit = vecs.into_iter();
        for _ in 0..100 {
            let v = DVector::from_fn(n, |_, _| vit.next().unwrap_or(0.3));
            let quad = (v.transpose() * &out * &v)[(0, 0)];
            prop_assert!(quad >= delta * v.norm_squared() - 1e-8);
        }
    }

    /// With the identity weight, the weighted norm is the L2 norm.
    #[test]
    fn weighted_norm_identity_matches_l2(vals in vec_strategy(7, 50.0)) {
        let x = DVector::from_vec(vals);
        let norm = weighted_norm(&x, &DMatrix::identity(7, 7)).unwrap();
        prop_assert!((norm - x.norm()).abs() <= 1e-12 * (1.0 + x.norm()));
    }

    /// The quadratic penalty separates exactly from the plain Lagrangian.
    #[test]
    fn augmented_lagrangian_penalty_decomposition(
        x0 in -3.0f64..3.0,
        x1 in -3.0f64..3.0,
        lam in -5.0f64..5.0,
        rho in 0.0f64..50.0,
    ) {
        let mk = || {
            LocalBlock::new(ScalarField::new(1, |x| x[0] * x[0] - x[0]))
                .with_coupling(DMatrix::from_element(1, 1, 1.0))
        };
        let p = SeparableProblem::new(vec![mk(), mk()], DVector::from_element(1, 1.5)).unwrap();
        let x = [DVector::from_element(1, x0), DVector::from_element(1, x1)];
        let lambda = DVector::from_element(1, lam);
        let with = p.augmented_lagrangian(&x, &lambda, rho).unwrap();
        let without = p.augmented_lagrangian(&x, &lambda, 0.0).unwrap();
        let r = p.coupling_residual(&x).unwrap();
        let expected = 0.5 * rho * r.norm_squared();
        prop_assert!((with - without - expected).abs() <= 1e-10 * (1.0 + with.abs()));
    }

    /// Malformed problems are rejected with the offending block named.
    #[test]
    fn build_problem_rejects_malformed(
        rows in 0usize..=4,
        cols in 1usize..=4,
        dim in 1usize..=4,
        b_len in 0usize..=4,
        flip_bounds in proptest::bool::ANY,
    ) {
        let blk = {
            let mut b = LocalBlock::new(ScalarField::new(dim, |x| x.norm_squared()))
                .with_coupling(DMatrix::zeros(rows, cols));
            if flip_bounds {
                b = b.with_bounds(
                    DVector::from_element(dim, 1.0),
                    DVector::from_element(dim, -1.0),
                );
            }
            b
        };
        let malformed = rows != b_len || cols != dim || flip_bounds;
        let result = SeparableProblem::new(vec![blk], DVector::zeros(b_len));
        if malformed {
            let rejected = matches!(result, Err(ProblemError::Dimension { block: 0, .. }));
            prop_assert!(rejected, "malformed instance was accepted");
        } else {
            prop_assert!(result.is_ok());
        }
    }
}
