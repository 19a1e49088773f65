//! Block-separable distributed optimization.
//!
//! The crate solves problems of the form
//!
//! ```text
//! minimize   sum_i f_i(x_i)
//! subject to g_i(x_i) = 0,  h_i(x_i) <= 0          (local constraints)
//!            sum_i A_i x_i = b                      (coupling constraint)
//! ```
//!
//! where each block `i` owns a private objective, private constraints, and a
//! contribution `A_i x_i` to a shared affine coupling condition.
//!
//! Solvers form a ladder of increasing robustness:
//!
//! - [`solvers::dual_ascent`]: gradient ascent on the dual, strictly convex
//!   objectives only.
//! - [`solvers::dual_decomposition`]: the same dual iteration with per-block
//!   subproblems that may run concurrently.
//! - [`solvers::method_of_multipliers`]: augmented Lagrangian; convergent for
//!   convex (not necessarily strictly convex) objectives.
//! - [`solvers::admm_two_block`] / [`solvers::consensus_admm`]: alternating
//!   minimization splitting.
//! - [`solvers::run_aladin`]: augmented-Lagrangian alternating-direction
//!   inexact Newton with an SQP-based coordination step; handles nonconvex
//!   local problems with equality and inequality constraints.
//!
//! Supporting machinery: [`calculus`] (finite differences, scalar root
//! finding, norms), [`kkt`] (dense saddle-point solves and definiteness
//! utilities), [`problem`] (the block-separable problem model),
//! [`benchmarks`] (consensus logistic regression and sensor-network
//! localization generators), and [`harness`] (sequential/concurrent block
//! execution with deterministic reduction order, plus runtime sweeps).
//!
//! ```
//! use distopt::calculus::ScalarField;
//! use distopt::problem::{LocalBlock, SeparableProblem};
//! use distopt::solvers::{method_of_multipliers, SolverConfig};
//! use nalgebra::{dmatrix, dvector};
//!
//! // minimize 0.5 x0^2 + 0.5 x1^2  subject to  x0 + x1 = 2
//! let block = || {
//!     LocalBlock::new(ScalarField::new(1, |x| 0.5 * x[0] * x[0]))
//!         .with_gradient(|x| x.clone())
//!         .with_coupling(dmatrix![1.0])
//! };
//! let problem = SeparableProblem::new(vec![block(), block()], dvector![2.0]).unwrap();
//! let result = method_of_multipliers(&problem, &SolverConfig::default(), None).unwrap();
//! assert!((result.state.x[0][0] - 1.0).abs() < 1e-6);
//! assert!((result.state.lambda[0] + 1.0).abs() < 1e-6);
//! ```

pub mod benchmarks;
pub mod calculus;
pub mod harness;
pub mod kkt;
pub mod problem;
pub mod rng;
pub mod solvers;

pub use problem::{
    ConvergenceTrace, IterateState, LocalBlock, ProblemError, SeparableProblem, TraceRecord,
};
pub use solvers::{SolveError, SolveResult, SolveStatus, SolverConfig};
