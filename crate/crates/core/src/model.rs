//! Gaussian search distributions and the information-geometric quantities
//! built on them.
//!
//! The optimizer state is a Gaussian `N(m, C)` parameterized by its mean
//! vector and covariance matrix. Everything here is a pure function of its
//! inputs. Symmetric results are re-symmetrized as `(M + Mᵀ)/2` after the
//! arithmetic so that round-off never accumulates into an asymmetric
//! covariance over long runs.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance used when validating symmetry of covariance input.
const SYMMETRY_TOL: f64 = 1e-12;

/// Mean and covariance of a multivariate Gaussian.
///
/// Construction validates that the covariance is symmetric and positive
/// definite, so a `GaussianParams` value can always be sampled from.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianParams {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::invalid(format!(
                "covariance is {}x{}, expected {d}x{d}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        check_finite_vec(&mean, "mean")?;
        check_finite(&cov, "covariance")?;
        if !is_symmetric(&cov, SYMMETRY_TOL) {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        if !is_positive_definite(&cov) {
            return Err(Error::domain("covariance is not positive definite"));
        }
        Ok(Self { mean, cov })
    }

    /// `N(0, I_d)`.
    pub fn standard(d: usize) -> Result<Self> {
        Self::new(DVector::zeros(d), DMatrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }
}

/// Eigendecomposition `M = B diag(λ) Bᵀ` of a symmetric matrix, eigenvalues
/// sorted in descending order.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub eigenvectors: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
}

impl SymEigen {
    pub fn largest(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn smallest(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// `B f(Λ) Bᵀ`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let b = &self.eigenvectors;
        let scaled = DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| {
            b[(i, j)] * f(self.eigenvalues[j])
        });
        symmetrize(&(scaled * b.transpose()))
    }
}

/// The natural gradient `(δm, δC)` of the quasi-objective, exact or estimated.
#[derive(Clone, Debug, PartialEq)]
pub struct NaturalGradient {
    pub delta_mean: DVector<f64>,
    pub delta_cov: DMatrix<f64>,
}

impl NaturalGradient {
    pub fn zeros(d: usize) -> Self {
        Self {
            delta_mean: DVector::zeros(d),
            delta_cov: DMatrix::zeros(d, d),
        }
    }

    /// `[δmᵀ, vect(δC)ᵀ]ᵀ` with column-major `vect`.
    pub fn stacked(&self) -> DVector<f64> {
        stack(&self.delta_mean, &self.delta_cov)
    }
}

/// Gradient of `ln p_θ(x)` with respect to `(m, C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogLikelihoodGradient {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// `[vᵀ, vect(M)ᵀ]ᵀ`, where element `(i, j)` of `M` lands at `d + i + d·j`.
pub fn stack(v: &DVector<f64>, m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        v.len() + m.len(),
        v.iter().chain(m.as_slice().iter()).copied(),
    )
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `|M[i,j] − M[j,i]| ≤ tol · max(1, |M[i,j]|)` for every pair.
pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let d = m.nrows();
    (0..d).all(|i| {
        (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * m[(i, j)].abs().max(1.0))
    })
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite()) && Cholesky::new(symmetrize(m)).is_some()
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} has non-finite entries")))
    }
}

fn check_finite_vec(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} has non-finite entries")))
    }
}

fn check_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() == m.ncols() && m.nrows() > 0 {
        Ok(m.nrows())
    } else {
        Err(Error::invalid(format!(
            "{what} must be a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
///
/// The input is symmetrized first. Within a repeated eigenvalue the basis
/// is whatever the underlying solver returns.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SymEigen> {
    let d = check_square(m, "matrix")?;
    check_finite(m, "matrix")?;
    let m = symmetrize(m);
    let mut eig = m.clone().symmetric_eigen();
    // nalgebra's QR iteration occasionally returns eigenvalues off by ~1e-9
    // relative; Rayleigh quotients in the computed basis (re-diagonalized if
    // that basis is itself inaccurate) restore full accuracy.
    let tol = 8.0 * f64::EPSILON * d as f64 * m.norm();
    for _ in 0..3 {
        let inner = symmetrize(&(eig.eigenvectors.transpose() * &m * &eig.eigenvectors));
        let off: f64 = (0..d)
            .flat_map(|j| (0..d).filter(move |&i| i != j).map(move |i| (i, j)))
            .map(|(i, j)| inner[(i, j)].powi(2))
            .sum();
        if off.sqrt() <= tol {
            eig.eigenvalues = inner.diagonal();
            break;
        }
        let refine = inner.symmetric_eigen();
        eig.eigenvectors = &eig.eigenvectors * refine.eigenvectors;
        eig.eigenvalues = refine.eigenvalues;
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let eigenvalues = DVector::from_iterator(d, order.iter().map(|&k| eig.eigenvalues[k]));
    let eigenvectors = DMatrix::from_fn(d, d, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(SymEigen {
        eigenvectors,
        eigenvalues,
    })
}

/// Principal square root `B √D Bᵀ` of a symmetric positive-definite matrix.
pub fn matrix_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m)?;
    if eig.smallest() <= 0.0 {
        return Err(Error::domain(format!(
            "matrix square root needs a positive-definite matrix (smallest eigenvalue {:e})",
            eig.smallest()
        )));
    }
    Ok(eig.map_spectrum(f64::sqrt))
}

/// `Cond(CA) = λ₁/λ_d` of the symmetric matrix `√A C √A`, which is similar to `CA`.
pub fn cond_product(c: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<f64> {
    let sqrt_a = matrix_sqrt(a)?;
    cond_product_with_sqrt(c, &sqrt_a)
}

/// As [`cond_product`] with `√A` precomputed.
pub fn cond_product_with_sqrt(c: &DMatrix<f64>, sqrt_a: &DMatrix<f64>) -> Result<f64> {
    if c.shape() != sqrt_a.shape() {
        return Err(Error::invalid("covariance and Hessian-form matrix differ in shape"));
    }
    let eig = sym_eigen(&(sqrt_a * c * sqrt_a))?;
    if eig.smallest() <= 0.0 {
        return Err(Error::domain("covariance is not positive definite"));
    }
    Ok(eig.largest() / eig.smallest())
}

/// Closed-form natural gradient on `f(x) = g(xᵀAx)`: `δm = CAm`, `δC = CAC`.
///
/// The true natural gradient is a positive multiple `c` of this pair; `c` is
/// dropped since every learning-rate schedule here normalizes it away.
pub fn nat_grad_quadratic(params: &GaussianParams, a: &DMatrix<f64>) -> Result<NaturalGradient> {
    let d = params.dim();
    if a.shape() != (d, d) {
        return Err(Error::invalid(format!(
            "Hessian-form matrix is {}x{}, expected {d}x{d}",
            a.nrows(),
            a.ncols()
        )));
    }
    let ca = params.cov() * a;
    Ok(NaturalGradient {
        delta_mean: &ca * params.mean(),
        delta_cov: symmetrize(&(&ca * params.cov())),
    })
}

/// `∇l(θ; x) = (C⁻¹(x−m), ½(C⁻¹(x−m)(x−m)ᵀC⁻¹ − C⁻¹))`.
pub fn grad_log_likelihood(params: &GaussianParams, x: &DVector<f64>) -> Result<LogLikelihoodGradient> {
    if x.len() != params.dim() {
        return Err(Error::invalid("point dimension does not match the distribution"));
    }
    let c_inv = spd_inverse(params.cov())?;
    let u = &c_inv * (x - params.mean());
    let cov = symmetrize(&((&u * u.transpose() - &c_inv) * 0.5));
    Ok(LogLikelihoodGradient { mean: u, cov })
}

/// Fisher information in `θ = [mᵀ, vect(C)ᵀ]ᵀ` coordinates:
/// `blockdiag(C⁻¹, ½ C⁻¹⊗C⁻¹)`, of size `(d + d²)`.
pub fn fisher_matrix(params: &GaussianParams) -> Result<DMatrix<f64>> {
    let d = params.dim();
    let c_inv = spd_inverse(params.cov())?;
    let kron = c_inv.kronecker(&c_inv) * 0.5;
    let mut fisher = DMatrix::zeros(d + d * d, d + d * d);
    fisher.view_mut((0, 0), (d, d)).copy_from(&c_inv);
    fisher.view_mut((d, d), (d * d, d * d)).copy_from(&kron);
    Ok(fisher)
}

fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Cholesky::new(symmetrize(m))
        .map(|ch| symmetrize(&ch.inverse()))
        .ok_or_else(|| Error::domain("covariance is singular or not positive definite"))
}
