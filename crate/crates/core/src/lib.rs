//! Tamed Milstein integration of neutral stochastic delay differential
//! equations driven by a scalar Brownian motion, with baseline schemes,
//! a coupled-path Monte Carlo harness and sampled assumption checks.
//!
//! Monte Carlo loops fan out over paths with rayon when the `parallel`
//! feature is enabled (the default); results never depend on the worker
//! count.

pub mod assumptions;
pub mod brownian;
pub mod exec;
pub mod experiments;
pub mod problem;
pub mod schemes;
pub mod taming;

pub use brownian::{build_grid, coarsen_increments, compute_l2, dyadic_grid, sample_fine_path, GridSpec};
pub use exec::Execution;
pub use experiments::MonteCarlo;
pub use problem::{builtin_problem, validate_problem, CoefficientSet, InitialSegment, NsddeProblem, Rational};
pub use schemes::{simulate_path, SchemeKind, Trajectory};
