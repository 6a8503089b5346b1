//! Stochastic composition optimization: momentum + variance-reduced solvers
//! for `Φ(x) = f(g(x)) + r(x)`, classical baselines, benchmark problems, and
//! a deterministic experiment harness.
//!
//! Matrix norms in smoothness profiles and tests are Frobenius norms
//! throughout.

pub mod baseline;
pub mod data;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod portfolio;
pub mod problem;
pub mod prox;
pub mod solver;
pub mod spam;
pub mod synthetic;
pub mod trace;

pub use error::{Error, Result};
pub use problem::{CompositionProblem, LipschitzProfile, Point, Structure};
pub use prox::RegularizerKind;
pub use solver::{Algorithm, MomentumSchedule, RestartPolicy, SolverConfig, SolverOutput};
