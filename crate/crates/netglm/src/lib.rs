//! Debiased inference for high-dimensional logistic regression with
//! network-dependent binary responses.
//!
//! Responses live on the vertices of a weighted hypergraph and follow a
//! Markov-random-field law: conditionally on its neighbors, each `y_i` is a
//! logistic draw whose linear predictor combines the local interaction field
//! with a high-dimensional covariate term. The crate provides:
//!
//! * model simulation (Gibbs sampling plus an exact small-`n` oracle),
//! * l1-penalized pseudolikelihood estimation on a strong independent set,
//! * a projection-based bias correction solving a constrained quadratic
//!   program, with confidence intervals and tests for linear and quadratic
//!   functionals of the regression parameter,
//! * Bonferroni and BH-type multiple testing,
//! * a Monte Carlo harness that reproduces the reference coverage tables.
//!
//! All numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below pin `f64`, which is what the harness and the CLI use.

// Negated comparisons like `!(x > 0)` are deliberate: they treat NaN as a
// validation failure, which `x <= 0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod graph;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod mple;
pub mod mrf;
pub mod projection;
pub mod qp;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` hypergraph, as produced by the generators and the CLI.
pub type Hypergraph = graph::Hypergraph<f64>;
/// `f64` covariates-plus-responses bundle.
pub type Dataset = mrf::Dataset<f64>;
/// `f64` model specification (graph plus regression parameter).
pub type ModelSpec = mrf::ModelSpec<f64>;
/// `f64` penalized pseudolikelihood fit.
pub type MpleFit = mple::MpleFit<f64>;
/// `f64` projection-program output.
pub type ProjectionResult = projection::ProjectionResult<f64>;
/// `f64` linear-functional inference report.
pub type LinearInference = inference::LinearInference<f64>;
/// `f64` quadratic-functional inference report.
pub type QuadraticInference = inference::QuadraticInference<f64>;
