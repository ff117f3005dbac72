//! Fixtures shared by the criterion benches.

use ngd_core::det_ngd::{run_deterministic_with, DetSchedule};
use ngd_core::objectives::{build_ellipsoid, QuadraticComposite};
use ngd_core::rng::RngStream;
use ngd_core::stoch_ngd::{sample_population, SamplePopulation};
use ngd_core::{DMatrix, DVector, GaussianParams, StopCriteria};

/// The `d`-dimensional ellipsoid with `m = (1, …, 1)`, `C = I`.
pub fn ellipsoid_start(d: usize) -> (QuadraticComposite, GaussianParams) {
    let f = build_ellipsoid(d).expect("d >= 1");
    let params = GaussianParams::new(DVector::from_element(d, 1.0), DMatrix::identity(d, d))
        .expect("identity covariance");
    (f, params)
}

/// The state after `iters` deterministic steps from [`ellipsoid_start`]:
/// a covariance already stretched well away from the identity.
pub fn adapted_state(d: usize, iters: usize) -> (QuadraticComposite, GaussianParams) {
    let (f, init) = ellipsoid_start(d);
    let mut last = init.clone();
    let sched = DetSchedule::uniform(0.1).expect("valid rate");
    let stop = StopCriteria {
        target_j: 0.0,
        max_iters: iters,
    };
    run_deterministic_with(f.a(), init, &sched, &stop, |_, state| {
        last = state.params.clone();
    })
    .expect("deterministic run");
    (f, last)
}

/// One seeded population at `params`.
pub fn population(f: &QuadraticComposite, params: &GaussianParams, n: usize) -> SamplePopulation {
    sample_population(params, n, &mut RngStream::new(7), f).expect("valid population")
}
