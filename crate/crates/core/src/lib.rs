//! Natural-gradient descent on Gaussian search distributions.
//!
//! The crate implements three optimizers that share one parameterization,
//! a Gaussian `N(m, C)` with full covariance:
//!
//! - [`det_ngd`]: the deterministic (infinite-sample) natural-gradient
//!   iteration on monotonic convex-quadratic-composite functions, together
//!   with closed-form predictors of its condition-number dynamics;
//! - [`stoch_ngd`]: the sample-based algorithm that estimates the invariant
//!   cost of each sample by importance sampling and steps along the
//!   estimated natural gradient;
//! - [`cma_es`]: the pure rank-μ CMA-ES with intermediate recombination,
//!   the comparison baseline.
//!
//! [`harness`] runs seeded multi-trial experiments and writes the CSV data
//! used for plots.


// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod cma_es;
pub mod det_ngd;
mod error;
pub mod harness;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod stoch_ngd;
pub mod trace;

pub use nalgebra::{DMatrix, DVector};

pub use crate::error::{Error, Result};
pub use crate::model::{GaussianParams, NaturalGradient, SymEigen};
pub use crate::objectives::{Objective, QuadraticComposite, Transform};
pub use crate::rng::RngStream;
pub use crate::trace::{IterationTrace, StopCriteria};
