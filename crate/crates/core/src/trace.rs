use nalgebra::DMatrix;

use crate::error::Result;
use crate::model::{cond_product_with_sqrt, GaussianParams};
use crate::objectives::expected_objective;

/// Per-iteration diagnostics of a run.
///
/// The learning rates are the ones that produced this iterate; they are
/// `None` on the initial row and on skipped updates.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationTrace {
    pub iteration: usize,
    /// `Cond(CᵗA)`.
    pub cond: f64,
    /// Expected objective `mᵀAm + Tr(AC)`.
    pub expected_j: f64,
    pub norm_m: f64,
    /// Frobenius norm of the covariance.
    pub norm_c: f64,
    pub eta_m: Option<f64>,
    pub eta_c: Option<f64>,
    /// Spectral norm of the `Z` matrix (stochastic NGD only).
    pub sigma1_z: Option<f64>,
}

/// Step rates reported by an update, if one was taken.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepRates {
    pub eta_m: Option<f64>,
    pub eta_c: Option<f64>,
    pub sigma1_z: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopCriteria {
    pub target_j: f64,
    pub max_iters: usize,
}

impl Default for StopCriteria {
    fn default() -> Self {
        Self {
            target_j: 1e-10,
            max_iters: 100_000,
        }
    }
}

impl StopCriteria {
    pub fn reached(&self, row: &IterationTrace) -> bool {
        row.expected_j <= self.target_j || row.iteration >= self.max_iters
    }
}

/// Diagnostics computed with a known Hessian-form matrix `A` (given with `√A`).
pub(crate) fn diagnose(
    iteration: usize,
    params: &GaussianParams,
    a: &DMatrix<f64>,
    sqrt_a: &DMatrix<f64>,
    rates: StepRates,
) -> Result<IterationTrace> {
    Ok(IterationTrace {
        iteration,
        cond: cond_product_with_sqrt(params.cov(), sqrt_a)?,
        expected_j: expected_objective(params, a)?,
        norm_m: params.mean().norm(),
        norm_c: params.cov().norm(),
        eta_m: rates.eta_m,
        eta_c: rates.eta_c,
        sigma1_z: rates.sigma1_z,
    })
}

/// Records `init`, then alternates `step` and diagnostics until `stop` is reached.
pub(crate) fn run_loop(
    a: &DMatrix<f64>,
    init: GaussianParams,
    stop: &StopCriteria,
    mut step: impl FnMut() -> Result<(GaussianParams, StepRates)>,
) -> Result<Vec<IterationTrace>> {
    if a.shape() != (init.dim(), init.dim()) {
        return Err(crate::error::Error::invalid(
            "diagnostic form matrix does not match the distribution",
        ));
    }
    let sqrt_a = crate::model::matrix_sqrt(a)?;
    let mut rows = vec![diagnose(0, &init, a, &sqrt_a, StepRates::default())?];
    while !stop.reached(rows.last().expect("non-empty")) {
        let (params, rates) = step()?;
        rows.push(diagnose(rows.len(), &params, a, &sqrt_a, rates)?);
    }
    Ok(rows)
}
