//! Pure rank-μ update CMA-ES with intermediate recombination.
//!
//! No evolution paths and no step-size control: the update is the same
//! weighted estimate as in [`crate::stoch_ngd`], with rank-based selection
//! weights in place of estimated invariant costs.
//!
//! Sign convention: the selection weights here are positive on good points
//! and the parameters move *along* the estimate (`θ + η δθ`), while
//! stochastic NGD uses cost weights, larger on bad points, and moves
//! against it. Both paths share [`estimate_gradient`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::GaussianParams;
use crate::objectives::Objective;
use crate::rng::RngStream;
use crate::stoch_ngd::{
    estimate_gradient, finish_update, raw_update, sample_population, SamplePopulation, UpdateSign,
};
use crate::trace::{IterationTrace, StepRates, StopCriteria};

/// Equal weights `1/μ` on the best `μ = ⌊n/4⌋` ranks, zero elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct CmaWeights {
    n: usize,
    mu: usize,
    by_rank: Vec<f64>,
}

impl CmaWeights {
    pub fn intermediate(n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::invalid(format!("CMA-ES needs n >= 4, got {n}")));
        }
        // Eligibility reads as R_i <= floor(n/4), i.e. the elite quartile.
        let mu = n / 4;
        let by_rank = (1..=n)
            .map(|r| if r <= mu { 1.0 / mu as f64 } else { 0.0 })
            .collect();
        Ok(Self { n, mu, by_rank })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mu(&self) -> usize {
        self.mu
    }

    /// Weight of the sample with 1-based rank `rank`.
    pub fn for_rank(&self, rank: usize) -> f64 {
        self.by_rank[rank - 1]
    }

    pub fn by_rank(&self) -> &[f64] {
        &self.by_rank
    }

    /// `μ_w = 1/Σ wᵢ²`.
    pub fn mu_eff(&self) -> f64 {
        1.0 / self.by_rank.iter().map(|w| w * w).sum::<f64>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CmaSchedule {
    pub eta_m: f64,
    pub eta_c: f64,
    pub mu_w: f64,
}

impl CmaSchedule {
    /// `η_m = 1`, `η_C = (2μ_w − 1)/((d + 2)² + μ_w)`.
    pub fn standard(d: usize, weights: &CmaWeights) -> Self {
        let mu_w = weights.mu_eff();
        let dd = (d + 2) as f64;
        Self {
            eta_m: 1.0,
            eta_c: (2.0 * mu_w - 1.0) / (dd * dd + mu_w),
            mu_w,
        }
    }
}

/// `Rᵢ = |{j : f(xⱼ) ≤ f(xᵢ)}|`, so the strict best has rank 1 and tied
/// values share the larger rank.
pub fn rank_samples(fvals: &[f64]) -> Result<Vec<usize>> {
    if fvals.is_empty() {
        return Err(Error::invalid("cannot rank an empty population"));
    }
    if let Some(i) = fvals.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("f-value {i} is not finite: {}", fvals[i])));
    }
    let n = fvals.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| fvals[a].total_cmp(&fvals[b]));
    let mut ranks = vec![0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && fvals[order[end]] == fvals[order[start]] {
            end += 1;
        }
        for &i in &order[start..end] {
            ranks[i] = end;
        }
        start = end;
    }
    Ok(ranks)
}

/// Fills `pop.weights` from the rank weights.
pub fn assign_rank_weights(pop: &mut SamplePopulation, w: &CmaWeights) -> Result<()> {
    if pop.len() != w.n() {
        return Err(Error::invalid(format!(
            "population has {} samples, weights are for {}",
            pop.len(),
            w.n()
        )));
    }
    let ranks = rank_samples(&pop.fvals)?;
    pop.weights = ranks.iter().map(|&r| w.for_rank(r)).collect();
    Ok(())
}

/// `m ← m + η_m Σwᵢ(xᵢ − m)`, `C ← C + η_C Σwᵢ((xᵢ − m)(xᵢ − m)ᵀ − C)`.
pub fn cma_step(
    params: &GaussianParams,
    pop: &SamplePopulation,
    sched: &CmaSchedule,
) -> Result<GaussianParams> {
    let grad = estimate_gradient(pop, params)?;
    let (mean, cov) = raw_update(params, &grad, sched.eta_m, sched.eta_c, UpdateSign::Ascend);
    finish_update(mean, cov)
}

#[derive(Clone, Debug)]
pub struct RankMuCma {
    params: GaussianParams,
    weights: CmaWeights,
    sched: CmaSchedule,
    rng: RngStream,
    iteration: usize,
}

impl RankMuCma {
    pub fn new(init: GaussianParams, n: usize, rng: RngStream) -> Result<Self> {
        let weights = CmaWeights::intermediate(n)?;
        let sched = CmaSchedule::standard(init.dim(), &weights);
        Ok(Self {
            params: init,
            weights,
            sched,
            rng,
            iteration: 0,
        })
    }

    pub fn params(&self) -> &GaussianParams {
        &self.params
    }

    pub fn schedule(&self) -> &CmaSchedule {
        &self.sched
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn step(&mut self, f: &dyn Objective) -> Result<StepRates> {
        let mut pop = sample_population(&self.params, self.weights.n(), &mut self.rng, f)?;
        assign_rank_weights(&mut pop, &self.weights)?;
        self.params = cma_step(&self.params, &pop, &self.sched)?;
        self.iteration += 1;
        Ok(StepRates {
            eta_m: Some(self.sched.eta_m),
            eta_c: Some(self.sched.eta_c),
            sigma1_z: None,
        })
    }
}

pub fn run_cma(
    f: &dyn Objective,
    init: GaussianParams,
    n: usize,
    rng: RngStream,
    stop: &StopCriteria,
    a: &DMatrix<f64>,
) -> Result<Vec<IterationTrace>> {
    let start = init.clone();
    let mut opt = RankMuCma::new(init, n, rng)?;
    crate::trace::run_loop(a, start, stop, || {
        let rates = opt.step(f)?;
        Ok((opt.params().clone(), rates))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{build_ellipsoid, FnObjective, Transform};
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    #[test]
    fn ranks_examples() {
        assert_eq!(rank_samples(&[3.0, 1.0, 2.0]).unwrap(), vec![3, 1, 2]);
        assert_eq!(rank_samples(&[1.0, 1.0]).unwrap(), vec![2, 2]);
        assert_eq!(rank_samples(&[5.0, 2.0, 2.0, 0.0]).unwrap(), vec![4, 3, 3, 1]);
        let f = [3.0, 0.5, 2.0, 7.0];
        let g: Vec<f64> = f.iter().map(|v: &f64| v.powf(0.25)).collect();
        assert_eq!(rank_samples(&f).unwrap(), rank_samples(&g).unwrap());
        assert!(rank_samples(&[1.0, f64::NAN]).is_err());
        assert!(rank_samples(&[f64::INFINITY]).is_err());
        assert!(rank_samples(&[]).is_err());
    }

    #[test]
    fn weights_and_rates() {
        let w = CmaWeights::intermediate(20).unwrap();
        assert_eq!(w.mu(), 5);
        assert_relative_eq!(w.by_rank().iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert!(w.by_rank().iter().all(|&x| x >= 0.0));
        assert_relative_eq!(w.mu_eff(), 5.0, max_relative = 1e-14);
        let s = CmaSchedule::standard(20, &w);
        assert_relative_eq!(s.eta_c, 9.0 / 489.0, max_relative = 1e-14);
        assert_relative_eq!(s.eta_c, 0.0184049, epsilon = 1e-7);
        assert_eq!(s.eta_m, 1.0);

        let w = CmaWeights::intermediate(400).unwrap();
        assert_relative_eq!(w.mu_eff(), 100.0, max_relative = 1e-12);
        assert_relative_eq!(CmaSchedule::standard(20, &w).eta_c, 199.0 / 584.0, max_relative = 1e-12);

        assert!(CmaWeights::intermediate(3).is_err());
    }

    #[test]
    fn degenerate_samples_shrink_covariance() {
        // every sample at the mean: rank-one terms vanish, C⁺ = (1 − η_C) C
        let p = GaussianParams::new(DVector::from_vec(vec![1.0, -2.0]), DMatrix::identity(2, 2) * 3.0).unwrap();
        let w = CmaWeights::intermediate(8).unwrap();
        let sched = CmaSchedule::standard(2, &w);
        let x = DMatrix::from_fn(2, 8, |i, _| p.mean()[i]);
        let mut pop = SamplePopulation {
            z: DMatrix::zeros(2, 8),
            x,
            fvals: (0..8).map(|i| i as f64).collect(),
            log_det_cov: 0.0,
            vhat: Vec::new(),
            vhat_log_scale: 0.0,
            baseline: 0.0,
            weights: Vec::new(),
        };
        assign_rank_weights(&mut pop, &w).unwrap();
        let next = cma_step(&p, &pop, &sched).unwrap();
        assert_eq!(next.mean(), p.mean());
        assert_relative_eq!(next.cov(), &(p.cov() * (1.0 - sched.eta_c)), max_relative = 1e-14);
    }

    #[test]
    fn single_elite_moves_mean_to_best_sample() {
        let p = GaussianParams::standard(2).unwrap();
        let f = FnObjective::new(2, |x: &[f64]| (x[0] - 3.0).powi(2) + x[1] * x[1]);
        let mut rng = RngStream::new(11);
        let mut pop = sample_population(&p, 4, &mut rng, &f).unwrap();
        let w = CmaWeights::intermediate(4).unwrap();
        assert_eq!(w.mu(), 1);
        assign_rank_weights(&mut pop, &w).unwrap();
        let best = (0..4)
            .min_by(|&a, &b| pop.fvals[a].total_cmp(&pop.fvals[b]))
            .unwrap();
        let next = cma_step(&p, &pop, &CmaSchedule::standard(2, &w)).unwrap();
        assert_relative_eq!(next.mean().as_slice(), pop.x_col(best), epsilon = 1e-15);
    }

    #[test]
    fn covariance_stays_positive_definite() {
        let f = build_ellipsoid(6).unwrap();
        let mut opt = RankMuCma::new(GaussianParams::standard(6).unwrap(), 8, RngStream::new(5)).unwrap();
        for _ in 0..2000 {
            opt.step(&f).unwrap();
            assert!(opt.params().cov().clone().cholesky().is_some());
        }
    }

    #[test]
    fn monotone_transform_gives_identical_trajectory() {
        let f = build_ellipsoid(5).unwrap();
        let g = f.with_transform(Transform::Power(0.25)).unwrap();
        let init = GaussianParams::standard(5).unwrap();
        let mut a = RankMuCma::new(init.clone(), 12, RngStream::new(77)).unwrap();
        let mut b = RankMuCma::new(init, 12, RngStream::new(77)).unwrap();
        for _ in 0..200 {
            a.step(&f).unwrap();
            b.step(&g).unwrap();
            assert_eq!(a.params(), b.params());
        }
    }
}
