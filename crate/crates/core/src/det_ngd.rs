//! Deterministic natural-gradient descent on `f(x) = g(xᵀAx)`.
//!
//! On these functions the natural gradient is known in closed form,
//! `(δm, δC) ∝ (CAm, CAC)`, so the idealized infinite-sample dynamics can be
//! iterated exactly. Learning rates are normalized by
//! `λ₁(C⁻¹δC) = λ₁(√A C √A)`:
//!
//! ```text
//! m ← m − (α_m/λ₁) CAm
//! C ← C − (α_C/λ₁) CAC
//! ```
//!
//! Under this schedule the condition number of `CA` follows the scalar
//! recurrence in [`predict_cond_recurrence`] exactly.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{matrix_sqrt, sym_eigen, symmetrize, GaussianParams};
use crate::trace::{diagnose, IterationTrace, StepRates, StopCriteria};

/// Normalized pseudo-learning rates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetSchedule {
    alpha_m: f64,
    alpha_c: f64,
}

impl DetSchedule {
    /// Requires `0 < alpha_m ≤ 1` and `0 < alpha_c ≤ ½`.
    pub fn new(alpha_m: f64, alpha_c: f64) -> Result<Self> {
        if !(alpha_m > 0.0 && alpha_m <= 1.0) {
            return Err(Error::invalid(format!("alpha_m must lie in (0, 1], got {alpha_m}")));
        }
        if !(alpha_c > 0.0 && alpha_c <= 0.5) {
            return Err(Error::invalid(format!("alpha_c must lie in (0, 1/2], got {alpha_c}")));
        }
        Ok(Self { alpha_m, alpha_c })
    }

    /// `alpha_m = alpha_c = alpha`.
    pub fn uniform(alpha: f64) -> Result<Self> {
        Self::new(alpha, alpha)
    }

    pub fn alpha_m(&self) -> f64 {
        self.alpha_m
    }

    pub fn alpha_c(&self) -> f64 {
        self.alpha_c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetState {
    pub params: GaussianParams,
    pub iteration: usize,
}

impl DetState {
    pub fn new(params: GaussianParams) -> Self {
        Self { params, iteration: 0 }
    }
}

/// One deterministic NGD step.
pub fn det_step(state: &DetState, a: &DMatrix<f64>, sched: &DetSchedule) -> Result<DetState> {
    let sqrt_a = checked_sqrt_form(a, state.params.dim())?;
    det_step_with_sqrt(state, a, &sqrt_a, sched).map(|(s, _)| s)
}

fn checked_sqrt_form(a: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    if a.shape() != (d, d) {
        return Err(Error::invalid(format!(
            "Hessian-form matrix is {}x{}, expected {d}x{d}",
            a.nrows(),
            a.ncols()
        )));
    }
    matrix_sqrt(a)
}

pub(crate) fn det_step_with_sqrt(
    state: &DetState,
    a: &DMatrix<f64>,
    sqrt_a: &DMatrix<f64>,
    sched: &DetSchedule,
) -> Result<(DetState, StepRates)> {
    let m = state.params.mean();
    let c = state.params.cov();

    let lambda1 = sym_eigen(&(sqrt_a * c * sqrt_a))?.largest();
    if !(lambda1 > 0.0) {
        return Err(Error::Internal(format!(
            "largest eigenvalue of sqrt(A) C sqrt(A) is {lambda1}"
        )));
    }
    let eta_m = sched.alpha_m / lambda1;
    let eta_c = sched.alpha_c / lambda1;

    let mean = m - (c * (a * m)) * eta_m;
    // CAC as the Gram matrix of C√A: same value, far less cancellation when
    // C approaches a multiple of A⁻¹ on an ill-conditioned A.
    let b = c * sqrt_a;
    let cov = symmetrize(&(c - (&b * b.transpose()) * eta_c));
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow(format!(
            "non-finite parameters after iteration {}",
            state.iteration
        )));
    }
    let params = GaussianParams::new(mean, cov)?;
    Ok((
        DetState {
            params,
            iteration: state.iteration + 1,
        },
        StepRates {
            eta_m: Some(eta_m),
            eta_c: Some(eta_c),
            sigma1_z: None,
        },
    ))
}

fn check_cond_inputs(cond0: f64, alpha: f64) -> Result<()> {
    if !(cond0 >= 1.0 && cond0.is_finite()) {
        return Err(Error::invalid(format!("condition number must be finite and >= 1, got {cond0}")));
    }
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1/2], got {alpha}")));
    }
    Ok(())
}

/// Iterates `Cond ← Cond (1−α)/(1 − α/Cond)` `t` times.
pub fn predict_cond_recurrence(cond0: f64, alpha: f64, t: usize) -> Result<f64> {
    cond_recurrence_path(cond0, alpha, t).map(|p| p[t])
}

/// All iterates `Cond⁰ … Condᵗ` of the recurrence in [`predict_cond_recurrence`].
pub fn cond_recurrence_path(cond0: f64, alpha: f64, t: usize) -> Result<Vec<f64>> {
    check_cond_inputs(cond0, alpha)?;
    let mut path = Vec::with_capacity(t + 1);
    let mut cond = cond0;
    path.push(cond);
    for _ in 0..t {
        cond = (cond * (1.0 - alpha) / (1.0 - alpha / cond)).max(1.0);
        path.push(cond);
    }
    Ok(path)
}

/// `1 + ((1−2γ)/(1−γ))ᵗ (Cond⁰ − 1)`.
pub fn predict_cond_upper_bound(cond0: f64, gamma_min: f64, t: usize) -> Result<f64> {
    check_cond_inputs(cond0, gamma_min)?;
    let rate = (1.0 - 2.0 * gamma_min) / (1.0 - gamma_min);
    Ok(1.0 + rate.powi(t as i32) * (cond0 - 1.0))
}

/// Runs deterministic NGD from `init` until `J ≤ target_j` or `max_iters`.
///
/// Row `t` of the result describes `θᵗ`; the first row is the initial state.
pub fn run_deterministic(
    a: &DMatrix<f64>,
    init: GaussianParams,
    sched: &DetSchedule,
    stop: &StopCriteria,
) -> Result<Vec<IterationTrace>> {
    let mut trace = Vec::new();
    run_deterministic_with(a, init, sched, stop, |row, _| trace.push(row.clone()))?;
    Ok(trace)
}

/// As [`run_deterministic`], handing each row together with its state to `visit`.
pub fn run_deterministic_with(
    a: &DMatrix<f64>,
    init: GaussianParams,
    sched: &DetSchedule,
    stop: &StopCriteria,
    mut visit: impl FnMut(&IterationTrace, &DetState),
) -> Result<()> {
    let sqrt_a = checked_sqrt_form(a, init.dim())?;
    let mut state = DetState::new(init);
    let mut rates = StepRates::default();
    loop {
        let row = diagnose(state.iteration, &state.params, a, &sqrt_a, rates)?;
        visit(&row, &state);
        if stop.reached(&row) {
            return Ok(());
        }
        let (next, r) = det_step_with_sqrt(&state, a, &sqrt_a, sched)?;
        state = next;
        rates = r;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cond_product;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn schedule_bounds() {
        assert!(DetSchedule::new(1.0, 0.5).is_ok());
        assert!(DetSchedule::new(0.0, 0.5).is_err());
        assert!(DetSchedule::new(1.01, 0.5).is_err());
        assert!(DetSchedule::new(0.5, 0.51).is_err());
        assert!(DetSchedule::new(0.5, f64::NAN).is_err());
    }

    #[test]
    fn step_isotropic() {
        let p = GaussianParams::new(DVector::from_vec(vec![1.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        let s = det_step(&DetState::new(p), &DMatrix::identity(2, 2), &DetSchedule::uniform(0.5).unwrap()).unwrap();
        assert_eq!(s.params.mean().as_slice(), &[0.5, 0.0]);
        assert_eq!(s.params.cov(), &(DMatrix::identity(2, 2) * 0.5));
        assert_eq!(s.iteration, 1);
    }

    #[test]
    fn step_by_hand() {
        // λ₁ = 4; m⁺ = (1,1) − (0.5/4)(1,4); C⁺ = I − (0.25/4) diag(1,16)
        let a = diag(&[1.0, 4.0]);
        let p = GaussianParams::new(DVector::from_vec(vec![1.0, 1.0]), DMatrix::identity(2, 2)).unwrap();
        let s = det_step(&DetState::new(p), &a, &DetSchedule::new(0.5, 0.25).unwrap()).unwrap();
        assert_relative_eq!(s.params.mean()[0], 0.875, epsilon = 1e-15);
        assert_relative_eq!(s.params.mean()[1], 0.5, epsilon = 1e-15);
        assert_relative_eq!(s.params.cov(), &diag(&[0.9375, 0.75]), epsilon = 1e-15);
    }

    #[test]
    fn inverse_hessian_direction_is_fixed() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let a_inv = a.clone().try_inverse().unwrap();
        let p = GaussianParams::new(DVector::zeros(3), symmetrize(&(&a_inv / 7.0))).unwrap();
        let s = det_step(&DetState::new(p), &a, &DetSchedule::uniform(0.3).unwrap()).unwrap();
        // C⁺ = (1 − 0.3) A⁻¹/7
        assert_relative_eq!(s.params.cov(), &(&a_inv * (0.7 / 7.0)), max_relative = 1e-12);
        assert_relative_eq!(cond_product(s.params.cov(), &a).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn step_rejects_mismatched_form() {
        let s = DetState::new(GaussianParams::standard(2).unwrap());
        assert!(matches!(
            det_step(&s, &DMatrix::identity(3, 3), &DetSchedule::uniform(0.1).unwrap()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn recurrence_examples() {
        for t in [0, 1, 10, 1000] {
            assert_eq!(predict_cond_recurrence(1.0, 0.25, t).unwrap(), 1.0);
        }
        let one = predict_cond_recurrence(1e6, 0.1, 1).unwrap();
        assert_relative_eq!(one, 1e6 * 0.9 / (1.0 - 1e-7), max_relative = 1e-15);
        assert_relative_eq!(one, 900000.09, epsilon = 1e-2);
        assert!(predict_cond_recurrence(10.0, 0.0, 1).is_err());
        assert!(predict_cond_recurrence(10.0, 0.6, 1).is_err());
        assert!(predict_cond_recurrence(0.5, 0.1, 1).is_err());
    }

    #[test]
    fn recurrence_asymptotic_factor() {
        // (Condᵗ⁺¹−1)/(Condᵗ−1) → (1−2α)/(1−α) = 8/9 for α = 0.1
        // deviation is O(Cond − 1), so stop while Cond − 1 ≈ 1e-5 (well above roundoff)
        let path = cond_recurrence_path(2.0, 0.1, 100).unwrap();
        let ratio = (path[100] - 1.0) / (path[99] - 1.0);
        assert_relative_eq!(ratio, 8.0 / 9.0, epsilon = 1e-4);
        let path = cond_recurrence_path(1e6, 0.1, 400).unwrap();
        assert!(path.windows(2).all(|w| w[1] <= w[0] && w[1] >= 1.0));
    }

    #[test]
    fn upper_bound_examples() {
        assert_eq!(predict_cond_upper_bound(123.0, 0.2, 0).unwrap(), 123.0);
        let b = predict_cond_upper_bound(1e6, 0.1, 50).unwrap();
        assert_relative_eq!(b, 1.0 + (8f64 / 9.0).powi(50) * (1e6 - 1.0), max_relative = 1e-14);
        assert_relative_eq!(b, 2770.32, epsilon = 1e-2);
        for t in 1..5 {
            assert_eq!(predict_cond_upper_bound(1e6, 0.5, t).unwrap(), 1.0);
        }
        assert!(predict_cond_upper_bound(10.0, 0.7, 3).is_err());
    }

    /// The closed-form bound is below the exact recurrence as soon as the
    /// first step from an ill-conditioned start: the per-step contraction
    /// of `Cond − 1` lies in `[(1−2γ)/(1−γ), 1−γ]`, approaching the lower
    /// end only as `Cond → 1`.
    #[test]
    fn recurrence_sits_between_the_two_rate_bounds() {
        let alpha = 0.1;
        let exact = predict_cond_recurrence(1e6, alpha, 1).unwrap();
        assert!(exact > predict_cond_upper_bound(1e6, alpha, 1).unwrap());

        let path = cond_recurrence_path(1e6, alpha, 300).unwrap();
        for (t, c) in path.iter().enumerate() {
            let loose = 1.0 + (1.0 - alpha).powi(t as i32) * (1e6 - 1.0);
            assert!(*c <= loose * (1.0 + 1e-12), "t={t}");
        }
    }

    #[test]
    fn run_isotropic_expected_objective() {
        // A = I, C⁰ = I, m⁰ = 0: λ₁ = trace scale, J_t = d·(1 − α_C)ᵗ
        let d = 3;
        let sched = DetSchedule::new(0.5, 0.25).unwrap();
        let stop = StopCriteria {
            target_j: 0.0,
            max_iters: 40,
        };
        let trace = run_deterministic(
            &DMatrix::identity(d, d),
            GaussianParams::standard(d).unwrap(),
            &sched,
            &stop,
        )
        .unwrap();
        assert_eq!(trace.len(), 41);
        for row in &trace {
            let expected = d as f64 * 0.75f64.powi(row.iteration as i32);
            assert_relative_eq!(row.expected_j, expected, max_relative = 1e-12);
            assert_relative_eq!(row.cond, 1.0, epsilon = 1e-12);
        }
        assert_eq!(trace[0].eta_c, None);
        assert_eq!(trace[1].eta_c, Some(0.25));
    }

    #[test]
    fn run_stops_at_target() {
        let stop = StopCriteria {
            target_j: 1e-3,
            max_iters: 10_000,
        };
        let trace = run_deterministic(
            &diag(&[1.0, 100.0]),
            GaussianParams::standard(2).unwrap(),
            &DetSchedule::uniform(0.25).unwrap(),
            &stop,
        )
        .unwrap();
        let last = trace.last().unwrap();
        assert!(last.expected_j <= 1e-3);
        assert!(trace[..trace.len() - 1].iter().all(|r| r.expected_j > 1e-3));
    }
}
