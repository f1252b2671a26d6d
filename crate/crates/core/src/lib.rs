//! Node selection with an l2,g-regularized Gaussian graphical model.
//!
//! Parameter groups ("nodes") of a network are scored during training, the
//! score samples give a covariance estimate, and a group-sparse precision
//! matrix fitted by block coordinate ascent singles out the nodes coupled to
//! the most important ones.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod ggm;
pub mod io;
pub mod node_model;
pub mod pipeline;
pub mod scalar_prox;
pub mod surrogates;

pub use error::{Error, Result};
pub use ggm::{
    penalized_objective, solve_ggm, update_auxiliary, update_precision, update_precision_eig,
    AuxMatrix, GgmProblem, Mode, PrecisionMatrix, PrecisionMethod, SolverOptions, SolverReport,
};
pub use scalar_prox::{
    breakpoint_a0, oracle_threshold, solve_threshold, Branch, ProxProblem, ProxSolution,
};
pub use surrogates::{Surrogate, SurrogateKind};
