//! Stochastic natural-gradient descent with Monte-Carlo invariant costs.
//!
//! Each iteration:
//!
//! 1. decompose `C = B D Bᵀ` and form `√C = B √D Bᵀ`;
//! 2. draw `z₁ … z_n ~ N(0, I)` and set `xᵢ = m + √C zᵢ`;
//! 3. estimate the invariant cost of every sample by importance sampling
//!    the volume of its sublevel set,
//!    `vol̂(xᵢ) = (2π)^{d/2} det(D)^{1/2}/n · Σ_{j: f(xⱼ) ≤ f(xᵢ)} exp(‖zⱼ‖²/2)`,
//!    and take `V̂ = vol̂^{2/d}` (see [`VhatExponent`]);
//! 4. subtract the mean as a baseline, `wᵢ = (V̂ᵢ − b)/n`;
//! 5. estimate `δm = Σ wᵢ(xᵢ − m)` and `δC = Σ wᵢ((xᵢ − m)(xᵢ − m)ᵀ − C)`;
//! 6. step against the estimate with rates `η_m = 1/σ₁(Z)` and
//!    `η_C = c_C/(2σ₁(Z))`, where `Z = Σ wᵢ(zᵢzᵢᵀ − I)`.
//!
//! Only comparisons of f-values enter the update, so runs on `f` and on
//! `g ∘ f` for strictly increasing `g` are bit-identical for the same seed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{sym_eigen, symmetrize, GaussianParams, NaturalGradient};
use crate::objectives::Objective;
use crate::rng::RngStream;
use crate::trace::{IterationTrace, StepRates, StopCriteria};

/// Which form of the Monte-Carlo invariant-cost estimator to use.
///
/// `Volume` is the sublevel-set volume estimate itself. `VolumePow2OverD`
/// raises it to the power `2/d`, the estimator whose limit is the quadratic
/// invariant cost `Leb^{2/d}`. The two agree for `d = 2`.
///
/// The `2/d` form is the default: it is the one whose expected update is the
/// natural gradient of `xᵀAx` on quadratics, and on the 20-D ellipsoid it
/// settles at `Cond ≈ 1.1` for `n = d³`, `c_C = 0.1`. The raw volume makes the
/// weights far more top-heavy (`∝ (xᵀAx)^{d/2}`) and settles near 1.3.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum VhatExponent {
    Volume,
    #[default]
    VolumePow2OverD,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StochSchedule {
    c_c: f64,
    guard_margin: f64,
    vhat_exponent: VhatExponent,
}

impl StochSchedule {
    /// Requires `0 < c_c ≤ 1`.
    pub fn new(c_c: f64) -> Result<Self> {
        if !(c_c > 0.0 && c_c <= 1.0) {
            return Err(Error::invalid(format!("c_C must lie in (0, 1], got {c_c}")));
        }
        Ok(Self {
            c_c,
            guard_margin: 1.0,
            vhat_exponent: VhatExponent::default(),
        })
    }

    /// Rejects any step with `η_C λ₁(Z) ≥ margin`. The default of 1 is exactly
    /// the positivity condition; smaller values leave extra headroom.
    pub fn with_guard_margin(mut self, margin: f64) -> Result<Self> {
        if !(margin > 0.0 && margin <= 1.0) {
            return Err(Error::invalid(format!("guard margin must lie in (0, 1], got {margin}")));
        }
        self.guard_margin = margin;
        Ok(self)
    }

    pub fn with_vhat_exponent(mut self, exponent: VhatExponent) -> Self {
        self.vhat_exponent = exponent;
        self
    }

    pub fn c_c(&self) -> f64 {
        self.c_c
    }

    pub fn guard_margin(&self) -> f64 {
        self.guard_margin
    }

    pub fn vhat_exponent(&self) -> VhatExponent {
        self.vhat_exponent
    }
}

/// One generation of samples and everything derived from them.
///
/// `z` and `x` hold one sample per column. `vhat` is stored relative to its
/// maximum (`vhat[i] = V̂ᵢ · exp(−vhat_log_scale)`); the update is invariant
/// to that common factor and the relative form cannot underflow.
#[derive(Clone, Debug)]
pub struct SamplePopulation {
    pub z: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub fvals: Vec<f64>,
    /// `ln det C` of the sampling distribution.
    pub log_det_cov: f64,
    pub vhat: Vec<f64>,
    pub vhat_log_scale: f64,
    pub baseline: f64,
    pub weights: Vec<f64>,
}

impl SamplePopulation {
    pub fn len(&self) -> usize {
        self.fvals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fvals.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.z.nrows()
    }

    fn column(m: &DMatrix<f64>, i: usize) -> &[f64] {
        let d = m.nrows();
        &m.as_slice()[i * d..(i + 1) * d]
    }

    pub fn z_col(&self, i: usize) -> &[f64] {
        Self::column(&self.z, i)
    }

    pub fn x_col(&self, i: usize) -> &[f64] {
        Self::column(&self.x, i)
    }

    /// `‖zᵢ‖²` for each sample.
    pub fn z_sq_norms(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.z_col(i).iter().map(|v| v * v).sum())
            .collect()
    }

    /// Runs the invariant-cost estimate and baseline weighting on this
    /// population, filling `vhat`, `baseline` and `weights`.
    pub fn assign_cost_weights(&mut self, exponent: VhatExponent) -> Result<()> {
        let log_vhat = log_invariant_cost(
            &self.fvals,
            &self.z_sq_norms(),
            self.log_det_cov,
            self.dim(),
            exponent,
        )?;
        let scale = log_vhat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.vhat = log_vhat.iter().map(|l| (l - scale).exp()).collect();
        self.vhat_log_scale = scale;
        let (b, w) = compute_weights(&self.vhat)?;
        self.baseline = b;
        self.weights = w;
        Ok(())
    }
}

/// `√C` and `ln det C` from one eigendecomposition.
pub(crate) fn sampling_frame(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let eig = sym_eigen(cov)?;
    if eig.smallest() <= 0.0 {
        return Err(Error::domain(format!(
            "cannot sample: covariance smallest eigenvalue is {:e}",
            eig.smallest()
        )));
    }
    let log_det = eig.eigenvalues.iter().map(|l| l.ln()).sum();
    Ok((eig.map_spectrum(f64::sqrt), log_det))
}

/// Draws `n` samples `xᵢ = m + √C zᵢ` and evaluates them.
///
/// The `z` vectors are consumed from `rng` in sample order, `d` values each.
/// Only `z`, `x`, `fvals` and `log_det_cov` are filled.
pub fn sample_population(
    params: &GaussianParams,
    n: usize,
    rng: &mut RngStream,
    f: &dyn Objective,
) -> Result<SamplePopulation> {
    if n < 2 {
        return Err(Error::invalid(format!("sample size must be at least 2, got {n}")));
    }
    let d = params.dim();
    if f.dim() != d {
        return Err(Error::invalid(format!(
            "objective has dimension {}, distribution has {d}",
            f.dim()
        )));
    }
    let (sqrt_c, log_det_cov) = sampling_frame(params.cov())?;

    let mut z = DMatrix::zeros(d, n);
    rng.fill_standard_normal(z.as_mut_slice());
    let mut x = &sqrt_c * &z;
    for mut col in x.column_iter_mut() {
        col += params.mean();
    }
    let fvals: Vec<f64> = (0..n)
        .map(|i| f.value(&x.as_slice()[i * d..(i + 1) * d]))
        .collect();
    if let Some(bad) = fvals.iter().position(|v| v.is_nan()) {
        return Err(Error::invalid(format!("objective returned NaN for sample {bad}")));
    }
    Ok(SamplePopulation {
        z,
        x,
        fvals,
        log_det_cov,
        vhat: Vec::new(),
        vhat_log_scale: 0.0,
        baseline: 0.0,
        weights: Vec::new(),
    })
}

/// `ln V̂(xᵢ)` for every sample.
///
/// The inner sum runs over every `j` with `f(xⱼ) ≤ f(xᵢ)`, `i` included and
/// ties counted on both sides, and is accumulated with a running log-sum-exp.
pub fn log_invariant_cost(
    fvals: &[f64],
    z_sq_norms: &[f64],
    log_det_d: f64,
    d: usize,
    exponent: VhatExponent,
) -> Result<Vec<f64>> {
    let n = fvals.len();
    if n == 0 || z_sq_norms.len() != n {
        return Err(Error::invalid("f-values and z norms must be non-empty and equally long"));
    }
    if fvals.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("f-values contain NaN"));
    }
    let log_prefactor =
        0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() + 0.5 * log_det_d - (n as f64).ln();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| fvals[a].total_cmp(&fvals[b]));

    let mut out = vec![0.0; n];
    let mut acc = f64::NEG_INFINITY;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && fvals[order[end]] == fvals[order[start]] {
            end += 1;
        }
        for &j in &order[start..end] {
            acc = log_add_exp(acc, 0.5 * z_sq_norms[j]);
        }
        let log_volume = log_prefactor + acc;
        let value = match exponent {
            VhatExponent::Volume => log_volume,
            VhatExponent::VolumePow2OverD => 2.0 / d as f64 * log_volume,
        };
        for &i in &order[start..end] {
            out[i] = value;
        }
        start = end;
    }
    Ok(out)
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Absolute `V̂(xᵢ)` values given `det(D)`.
pub fn estimate_invariant_cost(
    pop: &SamplePopulation,
    det_d: f64,
    exponent: VhatExponent,
) -> Result<Vec<f64>> {
    if !(det_d > 0.0) {
        return Err(Error::domain(format!("det(D) must be positive, got {det_d}")));
    }
    invariant_cost_from_log(log_invariant_cost(
        &pop.fvals,
        &pop.z_sq_norms(),
        det_d.ln(),
        pop.dim(),
        exponent,
    )?)
}

pub(crate) fn invariant_cost_from_log(log_vhat: Vec<f64>) -> Result<Vec<f64>> {
    log_vhat
        .into_iter()
        .map(|l| {
            let v = l.exp();
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NumericOverflow(format!(
                    "invariant cost exp({l}) overflows; use the relative form"
                )))
            }
        })
        .collect()
}

/// Baseline `b = mean(V̂)` and weights `wᵢ = (V̂ᵢ − b)/n`.
pub fn compute_weights(vhat: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = vhat.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {n}")));
    }
    let nf = n as f64;
    let baseline = vhat.iter().sum::<f64>() / nf;
    let weights = vhat.iter().map(|v| (v - baseline) / nf).collect();
    Ok((baseline, weights))
}

/// Which way an update moves along the weighted estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateSign {
    /// Cost weights (large on bad samples): `θ ← θ − η δθ`.
    Descend,
    /// Selection weights (large on good samples): `θ ← θ + η δθ`.
    Ascend,
}

/// `δm = Σ wᵢ(xᵢ − m)`, `δC = Σ wᵢ((xᵢ − m)(xᵢ − m)ᵀ − C)` with the
/// population's weights.
pub fn estimate_gradient(pop: &SamplePopulation, params: &GaussianParams) -> Result<NaturalGradient> {
    let n = pop.len();
    if pop.weights.len() != n {
        return Err(Error::invalid("population weights have not been assigned"));
    }
    if pop.dim() != params.dim() {
        return Err(Error::invalid("population and distribution dimensions differ"));
    }
    let w = DVector::from_column_slice(&pop.weights);
    let mut y = pop.x.clone();
    for mut col in y.column_iter_mut() {
        col -= params.mean();
    }
    let delta_mean = &y * &w;
    let mut yw = y.clone();
    for (mut col, wi) in yw.column_iter_mut().zip(pop.weights.iter()) {
        col *= *wi;
    }
    let weight_sum: f64 = pop.weights.iter().sum();
    let delta_cov = symmetrize(&(yw * y.transpose() - params.cov() * weight_sum));
    Ok(NaturalGradient {
        delta_mean,
        delta_cov,
    })
}

/// `Z = Σ wᵢ(zᵢzᵢᵀ − I)`, equal to `√C⁻¹ δĈ √C⁻¹`.
pub fn z_matrix(pop: &SamplePopulation) -> Result<DMatrix<f64>> {
    if pop.weights.len() != pop.len() {
        return Err(Error::invalid("population weights have not been assigned"));
    }
    let d = pop.dim();
    let mut zw = pop.z.clone();
    for (mut col, wi) in zw.column_iter_mut().zip(pop.weights.iter()) {
        col *= *wi;
    }
    let weight_sum: f64 = pop.weights.iter().sum();
    Ok(symmetrize(
        &(zw * pop.z.transpose() - DMatrix::<f64>::identity(d, d) * weight_sum),
    ))
}

/// Spectral norm of a symmetric matrix: the largest `|λ|`.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    let e = sym_eigen(m)?;
    Ok(e.largest().abs().max(e.smallest().abs()))
}

/// `(m ∓ η_m δm, C ∓ η_C δC)` without any validation of the result.
pub fn raw_update(
    params: &GaussianParams,
    grad: &NaturalGradient,
    eta_m: f64,
    eta_c: f64,
    sign: UpdateSign,
) -> (DVector<f64>, DMatrix<f64>) {
    let s = match sign {
        UpdateSign::Descend => -1.0,
        UpdateSign::Ascend => 1.0,
    };
    let mean = params.mean() + &grad.delta_mean * (s * eta_m);
    let cov = symmetrize(&(params.cov() + &grad.delta_cov * (s * eta_c)));
    (mean, cov)
}

/// Result of a stochastic step.
#[derive(Clone, Debug)]
pub enum StepOutcome {
    Updated { params: GaussianParams, rates: StepRates },
    /// `σ₁(Z) = 0`: every weight vanished and the parameters are unchanged.
    Skipped,
}

/// Steps 10–11 on a population whose weights are assigned.
pub fn stoch_step(
    params: &GaussianParams,
    pop: &SamplePopulation,
    sched: &StochSchedule,
) -> Result<StepOutcome> {
    let z = z_matrix(pop)?;
    let eig = sym_eigen(&z)?;
    let sigma1 = eig.largest().abs().max(eig.smallest().abs());
    if !(sigma1 > 0.0) {
        return Ok(StepOutcome::Skipped);
    }
    let eta_m = 1.0 / sigma1;
    let eta_c = sched.c_c / (2.0 * sigma1);
    if eta_c * eig.largest() >= sched.guard_margin {
        return Err(Error::domain(format!(
            "positivity guard: eta_C * lambda_1(Z) = {} >= {}",
            eta_c * eig.largest(),
            sched.guard_margin
        )));
    }
    let grad = estimate_gradient(pop, params)?;
    let (mean, cov) = raw_update(params, &grad, eta_m, eta_c, UpdateSign::Descend);
    let params = finish_update(mean, cov)?;
    Ok(StepOutcome::Updated {
        params,
        rates: StepRates {
            eta_m: Some(eta_m),
            eta_c: Some(eta_c),
            sigma1_z: Some(sigma1),
        },
    })
}

pub(crate) fn finish_update(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<GaussianParams> {
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow("non-finite parameters after update".into()));
    }
    GaussianParams::new(mean, cov).map_err(|e| match e {
        Error::Domain(msg) => Error::Domain(format!("positivity guard: {msg}")),
        other => other,
    })
}

/// A running stochastic NGD optimizer.
#[derive(Clone, Debug)]
pub struct StochasticNgd {
    params: GaussianParams,
    n: usize,
    sched: StochSchedule,
    rng: RngStream,
    iteration: usize,
}

impl StochasticNgd {
    pub fn new(init: GaussianParams, n: usize, sched: StochSchedule, rng: RngStream) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("sample size must be at least 2, got {n}")));
        }
        Ok(Self {
            params: init,
            n,
            sched,
            rng,
            iteration: 0,
        })
    }

    pub fn params(&self) -> &GaussianParams {
        &self.params
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Samples, weights and updates once. Rates are empty on a skipped step.
    pub fn step(&mut self, f: &dyn Objective) -> Result<StepRates> {
        let mut pop = sample_population(&self.params, self.n, &mut self.rng, f)?;
        pop.assign_cost_weights(self.sched.vhat_exponent)?;
        self.iteration += 1;
        match stoch_step(&self.params, &pop, &self.sched)? {
            StepOutcome::Updated { params, rates } => {
                self.params = params;
                Ok(rates)
            }
            StepOutcome::Skipped => Ok(StepRates::default()),
        }
    }
}

/// Runs stochastic NGD; diagnostics use the known form matrix `a`, the
/// optimizer itself only sees `f`.
pub fn run_stochastic(
    f: &dyn Objective,
    init: GaussianParams,
    n: usize,
    sched: &StochSchedule,
    rng: RngStream,
    stop: &StopCriteria,
    a: &DMatrix<f64>,
) -> Result<Vec<IterationTrace>> {
    let start = init.clone();
    let mut opt = StochasticNgd::new(init, n, *sched, rng)?;
    crate::trace::run_loop(a, start, stop, || {
        let rates = opt.step(f)?;
        Ok((opt.params().clone(), rates))
    })
}
