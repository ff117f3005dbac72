//! Monotonic convex-quadratic-composite test functions `f(x) = g(xᵀAx)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{is_positive_definite, is_symmetric, GaussianParams};

/// A black-box objective to minimize. Optimizers only ever call `value`.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
}

/// Strictly increasing scalar map `g` applied on top of the quadratic form.
#[derive(Clone)]
pub enum Transform {
    Identity,
    /// `t ↦ t^p`, `p > 0`.
    Power(f64),
    /// `t ↦ ln(1 + t)`.
    Log1p,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Transform {
    pub fn custom(g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Transform::Custom(Arc::new(g))
    }

    pub fn apply(&self, t: f64) -> f64 {
        match self {
            Transform::Identity => t,
            Transform::Power(p) => t.powf(*p),
            Transform::Log1p => t.ln_1p(),
            Transform::Custom(g) => g(t),
        }
    }

    /// Spot-checks strict monotonicity on a log-spaced grid over `[0, 1e12]`.
    fn validate(&self) -> Result<()> {
        if let Transform::Power(p) = self {
            if !(p.is_finite() && *p > 0.0) {
                return Err(Error::invalid(format!("power transform needs p > 0, got {p}")));
            }
        }
        let grid: Vec<f64> = std::iter::once(0.0)
            .chain((-12..=12).map(|k| 10f64.powi(k)))
            .collect();
        let increasing = grid
            .windows(2)
            .all(|w| self.apply(w[0]) < self.apply(w[1]));
        if increasing {
            Ok(())
        } else {
            Err(Error::invalid("transform is not strictly increasing on [0, ∞)"))
        }
    }
}

impl fmt::Debug for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Identity => f.write_str("Identity"),
            Transform::Power(p) => write!(f, "Power({p})"),
            Transform::Log1p => f.write_str("Log1p"),
            Transform::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// `f(x) = g(xᵀAx)` with `A` symmetric positive definite and `g` strictly increasing.
#[derive(Clone, Debug)]
pub struct QuadraticComposite {
    a: DMatrix<f64>,
    transform: Transform,
}

impl QuadraticComposite {
    pub fn new(a: DMatrix<f64>, transform: Transform) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::invalid("quadratic-form matrix must be non-empty and square"));
        }
        if !is_symmetric(&a, 1e-12) {
            return Err(Error::invalid("quadratic-form matrix is not symmetric"));
        }
        if !is_positive_definite(&a) {
            return Err(Error::domain("quadratic-form matrix is not positive definite"));
        }
        transform.validate()?;
        Ok(Self { a, transform })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn transform(&self) -> &Transform {
        &self.transform
    }

    pub fn with_transform(&self, transform: Transform) -> Result<Self> {
        Self::new(self.a.clone(), transform)
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(self.value(x.as_slice()))
    }

    /// `V_f(x) ∝ xᵀAx`, reported with proportionality constant 1. Independent
    /// of the transform.
    pub fn exact_invariant_cost(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(quadratic_form(&self.a, x.as_slice()))
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len == self.a.nrows() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "point has dimension {len}, objective has {}",
                self.a.nrows()
            )))
        }
    }
}

impl Objective for QuadraticComposite {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.transform.apply(quadratic_form(&self.a, x))
    }
}

fn quadratic_form(a: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = x.len();
    let mut acc = 0.0;
    for j in 0..d {
        let col = a.column(j);
        let mut s = 0.0;
        for i in 0..d {
            s += col[i] * x[i];
        }
        acc += s * x[j];
    }
    acc
}

/// `f(x) = Σ 10^{6(i−1)/(d−1)} x_i²`, Hessian eigenvalues spanning `[1, 10⁶]`.
pub fn build_ellipsoid(d: usize) -> Result<QuadraticComposite> {
    if d < 2 {
        return Err(Error::invalid(format!("ellipsoid needs d >= 2, got {d}")));
    }
    let diag = DVector::from_fn(d, |i, _| 10f64.powf(6.0 * i as f64 / (d - 1) as f64));
    QuadraticComposite::new(DMatrix::from_diagonal(&diag), Transform::Identity)
}

/// `J(θ) ∝ E[XᵀAX] = mᵀAm + Tr(AC)`.
pub fn expected_objective(params: &GaussianParams, a: &DMatrix<f64>) -> Result<f64> {
    let d = params.dim();
    if a.shape() != (d, d) {
        return Err(Error::invalid("quadratic-form matrix does not match the distribution"));
    }
    let m = params.mean();
    Ok(m.dot(&(a * m)) + a.component_mul(params.cov()).sum())
}

/// `x ↦ base(Bx + shift)`.
#[derive(Clone, Debug)]
pub struct AffineWrappedObjective {
    base: QuadraticComposite,
    b: DMatrix<f64>,
    shift: DVector<f64>,
}

pub fn affine_wrap(
    base: QuadraticComposite,
    b: DMatrix<f64>,
    shift: DVector<f64>,
) -> Result<AffineWrappedObjective> {
    let d = base.dim();
    if b.shape() != (d, d) || shift.len() != d {
        return Err(Error::invalid("affine map does not match the objective dimension"));
    }
    let scale = b.iter().fold(0f64, |acc, v| acc.max(v.abs())).max(1.0);
    if b.determinant().abs() <= 1e-12 * scale.powi(d as i32) {
        return Err(Error::domain("affine map matrix is singular"));
    }
    Ok(AffineWrappedObjective { base, b, shift })
}

impl AffineWrappedObjective {
    pub fn base(&self) -> &QuadraticComposite {
        &self.base
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn shift(&self) -> &DVector<f64> {
        &self.shift
    }

    /// `BᵀAB`, the quadratic form seen in the wrapped coordinates (exact when
    /// the shift is zero).
    pub fn induced_form(&self) -> DMatrix<f64> {
        crate::model::symmetrize(&(self.b.transpose() * self.base.a() * &self.b))
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<f64> {
        self.base.evaluate(&(&self.b * x + &self.shift))
    }
}

impl Objective for AffineWrappedObjective {
    fn dim(&self) -> usize {
        self.b.nrows()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let y = &self.b * DVector::from_column_slice(x) + &self.shift;
        self.base.value(y.as_slice())
    }
}

/// Adapter turning a closure into an [`Objective`].
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnObjective<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Objective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn ellipsoid_shapes() {
        let e = build_ellipsoid(20).unwrap();
        assert_relative_eq!(e.a()[(0, 0)], 1.0);
        assert_relative_eq!(e.a()[(19, 19)], 1e6, max_relative = 1e-14);
        assert_relative_eq!(e.a()[(1, 1)], 10f64.powf(6.0 / 19.0), max_relative = 1e-15);
        assert_relative_eq!(e.a()[(1, 1)], 2.06914, epsilon = 1e-5);

        let e = build_ellipsoid(2).unwrap();
        assert_eq!(e.a(), &diag(&[1.0, 1e6]));

        assert!(matches!(build_ellipsoid(1), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn evaluate_examples() {
        let f = QuadraticComposite::new(DMatrix::identity(2, 2), Transform::Identity).unwrap();
        assert_eq!(f.evaluate(&v(&[0.0, 0.0])).unwrap(), 0.0);

        let f = QuadraticComposite::new(diag(&[1.0, 4.0]), Transform::Identity).unwrap();
        assert_eq!(f.evaluate(&v(&[1.0, 1.0])).unwrap(), 5.0);
        let g = f.with_transform(Transform::Power(0.5)).unwrap();
        assert_relative_eq!(g.evaluate(&v(&[1.0, 1.0])).unwrap(), 5f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(g.evaluate(&v(&[1.0, 1.0])).unwrap(), 2.23607, epsilon = 1e-5);

        assert!(f.evaluate(&v(&[1.0])).is_err());
    }

    #[test]
    fn invariant_cost_examples() {
        let f = QuadraticComposite::new(diag(&[1.0, 4.0]), Transform::Identity).unwrap();
        let g = f.with_transform(Transform::Power(0.5)).unwrap();
        assert_eq!(f.exact_invariant_cost(&v(&[0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(f.exact_invariant_cost(&v(&[1.0, 1.0])).unwrap(), 5.0);
        assert_eq!(g.exact_invariant_cost(&v(&[1.0, 1.0])).unwrap(), 5.0);

        let s = QuadraticComposite::new(DMatrix::identity(2, 2), Transform::Log1p).unwrap();
        assert_eq!(s.exact_invariant_cost(&v(&[3.0, 4.0])).unwrap(), 25.0);
    }

    #[test]
    fn expected_objective_examples() {
        let p = GaussianParams::standard(2).unwrap();
        assert_eq!(expected_objective(&p, &DMatrix::identity(2, 2)).unwrap(), 2.0);

        let p = GaussianParams::new(v(&[1.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(expected_objective(&p, &diag(&[1.0, 4.0])).unwrap(), 6.0);

        // geometric series (10^{120/19} − 1)/(10^{6/19} − 1)
        let e = build_ellipsoid(20).unwrap();
        let p = GaussianParams::standard(20).unwrap();
        let r = 10f64.powf(6.0 / 19.0);
        let series = (r.powi(20) - 1.0) / (r - 1.0);
        let j = expected_objective(&p, e.a()).unwrap();
        assert_relative_eq!(j, series, max_relative = 1e-12);
        assert_relative_eq!(j, 1.93533e6, max_relative = 1e-5);

        assert!(expected_objective(&p, &DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn expected_objective_matches_monte_carlo() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, -0.2, 0.0, -0.2, 5.0]);
        let c = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 0.5, 0.0, 0.1, 0.0, 0.3]);
        let m = v(&[0.5, -1.0, 0.25]);
        let p = GaussianParams::new(m.clone(), c.clone()).unwrap();
        let exact = expected_objective(&p, &a).unwrap();

        let l = c.clone().cholesky().unwrap().l();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                let z = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
                let x = &m + &l * z;
                x.dot(&(&a * &x))
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se, "mc {mean} exact {exact} se {se}");
    }

    #[test]
    fn affine_examples() {
        let base = QuadraticComposite::new(DMatrix::identity(2, 2), Transform::Identity).unwrap();
        let x = v(&[0.3, -1.7]);

        let w = affine_wrap(base.clone(), DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        assert_eq!(w.evaluate(&x).unwrap(), base.evaluate(&x).unwrap());

        let w = affine_wrap(base.clone(), DMatrix::identity(2, 2) * 2.0, DVector::zeros(2)).unwrap();
        assert_eq!(w.evaluate(&v(&[1.0, 0.0])).unwrap(), 4.0);

        let b = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let w = affine_wrap(base.clone(), b, DVector::zeros(2)).unwrap();
        assert_eq!(w.evaluate(&v(&[1.0, 0.0])).unwrap(), 1.0);

        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            affine_wrap(base, singular, DVector::zeros(2)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn affine_induced_form() {
        let base = QuadraticComposite::new(diag(&[1.0, 3.0]), Transform::Identity).unwrap();
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.2, 2.0]);
        let w = affine_wrap(base, b, DVector::zeros(2)).unwrap();
        let x = v(&[0.7, -0.4]);
        let direct = w.evaluate(&x).unwrap();
        let induced = x.dot(&(w.induced_form() * &x));
        assert_relative_eq!(direct, induced, max_relative = 1e-14);
    }

    #[test]
    fn transform_validation() {
        let a = DMatrix::identity(2, 2);
        assert!(QuadraticComposite::new(a.clone(), Transform::Power(0.0)).is_err());
        assert!(QuadraticComposite::new(a.clone(), Transform::Power(-1.0)).is_err());
        assert!(QuadraticComposite::new(a.clone(), Transform::custom(|t| -t)).is_err());
        assert!(QuadraticComposite::new(a.clone(), Transform::custom(|t| (1.0 + t).ln() * 3.0)).is_ok());
        assert!(QuadraticComposite::new(diag(&[1.0, -1.0]), Transform::Identity).is_err());
    }

    proptest! {
        #[test]
        fn transform_preserves_order(
            x in proptest::collection::vec(-10.0..10.0f64, 3),
            y in proptest::collection::vec(-10.0..10.0f64, 3),
            p in 0.05..4.0f64,
        ) {
            let a = DMatrix::from_row_slice(3, 3, &[3.0, 0.5, 0.0, 0.5, 1.0, 0.1, 0.0, 0.1, 2.0]);
            let f = QuadraticComposite::new(a, Transform::Identity).unwrap();
            let (x, y) = (v(&x), v(&y));
            for t in [Transform::Power(p), Transform::Log1p, Transform::custom(|t| t.cbrt() + t)] {
                let g = f.with_transform(t).unwrap();
                let base = f.evaluate(&x).unwrap() <= f.evaluate(&y).unwrap();
                let wrapped = g.evaluate(&x).unwrap() <= g.evaluate(&y).unwrap();
                prop_assert_eq!(base, wrapped);
                prop_assert_eq!(f.exact_invariant_cost(&x).unwrap(), g.exact_invariant_cost(&x).unwrap());
            }
        }
    }
}
