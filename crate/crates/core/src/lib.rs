//! A second order bundle method for nonsmooth, nonconvex minimization with
//! nonsmooth inequality constraints.
//!
//! The solver builds a quadratic model of the objective and of the
//! scalarized constraint from a bounded bundle of past subgradients and
//! Hessian substitutes, computes a search direction from a convex QCQP, and
//! takes serious or null steps chosen by a line search.

pub mod bundle;
pub mod linalg;
pub mod linesearch;
pub mod params;
pub mod problem;
pub mod qcqp;
pub mod solver;

pub use linalg::{LinalgError, SymMatrix};
pub use params::{ParamError, SolverParams, PARAM_KEYS};
pub use problem::{
    builtin_names, builtin_problem, default_hessian, evaluate, scalarize_constraints, Evaluation,
    Oracle, OracleSample, Problem, ProblemError, Side,
};
pub use linesearch::{LineSearchError, LineSearchOutcome, StepKind};
pub use qcqp::{QcqpError, QcqpInstance, SubproblemSolution};
pub use solver::{
    run, run_with_callback, IterationRecord, IterationSnapshot, SolverError, SolverReport, SolverStatus,
    StationarityCertificate,
};
