//! Gaussian process priors, sampling and conditioning.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{input, Error, Result};
use crate::kernels::Kernel;
use crate::linalg::SpdFactor;
use crate::points::{bitwise_eq, Dataset, Points};

/// Roundoff allowance for negative posterior variances.
pub const VARIANCE_ROUNDOFF: f64 = 1e-10;

/// Anything with a mean and a covariance function. Posteriors implement it
/// too, so they can be conditioned again.
pub trait GaussianProcess {
    fn mean(&self, x: &[f64]) -> Result<f64>;

    fn cov(&self, x: &[f64], y: &[f64]) -> Result<f64>;

    fn mean_vector(&self, xs: &Points) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(xs.len());
        for (i, r) in xs.rows().enumerate() {
            out[i] = self.mean(r)?;
        }
        Ok(out)
    }

    fn cov_matrix(&self, a: &Points, b: &Points) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(a.len(), b.len());
        for (i, ra) in a.rows().enumerate() {
            for (j, rb) in b.rows().enumerate() {
                out[(i, j)] = self.cov(ra, rb)?;
            }
        }
        Ok(out)
    }

    fn cov_sym(&self, x: &Points) -> Result<DMatrix<f64>> {
        let n = x.len();
        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = self.cov(x.row(i), x.row(j))?;
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(out)
    }
}

pub type MeanFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone, Default)]
pub enum MeanFunction {
    #[default]
    Zero,
    Custom(MeanFn),
}

impl fmt::Debug for MeanFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeanFunction::Zero => write!(f, "Zero"),
            MeanFunction::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// `GP(m, k)`.
#[derive(Debug, Clone)]
pub struct GpPrior {
    pub kernel: Kernel,
    pub mean: MeanFunction,
}

impl GpPrior {
    pub fn new(kernel: Kernel) -> Self {
        Self {
            kernel,
            mean: MeanFunction::Zero,
        }
    }

    pub fn with_mean(kernel: Kernel, mean: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            kernel,
            mean: MeanFunction::Custom(Arc::new(mean)),
        }
    }
}

impl GaussianProcess for GpPrior {
    fn mean(&self, x: &[f64]) -> Result<f64> {
        match &self.mean {
            MeanFunction::Zero => Ok(0.0),
            MeanFunction::Custom(m) => {
                let v = m(x);
                if v.is_finite() {
                    Ok(v)
                } else {
                    input(format!("mean function returned {v} at {x:?}"))
                }
            }
        }
    }

    fn cov(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.kernel.eval(x, y)
    }

    fn cov_matrix(&self, a: &Points, b: &Points) -> Result<DMatrix<f64>> {
        self.kernel.gram(a, b)
    }

    fn cov_sym(&self, x: &Points) -> Result<DMatrix<f64>> {
        self.kernel.gram_sym(x)
    }
}

/// Draws `count` sample paths at the points `x` as `m_X + L u`, one per row,
/// where `L Lᵀ = K_XX` (jittered if needed) and `u` is standard normal.
pub fn sample_prior<P: GaussianProcess + ?Sized>(
    prior: &P,
    x: &Points,
    count: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let n = x.len();
    let m = prior.mean_vector(x)?;
    let k = prior.cov_sym(x)?;
    if n == 0 {
        return Ok(DMatrix::zeros(count, 0));
    }
    let l = SpdFactor::jittered(k, "prior covariance K_XX")?.lower();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(count, n);
    let mut u = DVector::zeros(n);
    for s in 0..count {
        for v in u.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let f = &l * &u + &m;
        out.row_mut(s).copy_from(&f.transpose());
    }
    Ok(out)
}

/// Posterior of a Gaussian process given observations `y = f(X) + ε`
/// with `ε ~ N(0, σ² I)`.
#[derive(Debug, Clone)]
pub struct GpPosterior<P = GpPrior> {
    prior: P,
    x: Points,
    factor: Option<SpdFactor>,
    residual_weights: DVector<f64>,
    noise_variance: f64,
}

/// Conditions `prior` on `data`. With `noise_variance == 0` the data are
/// interpolated and `K_XX` must pass the condition check.
pub fn condition<P: GaussianProcess>(
    prior: P,
    data: &Dataset,
    noise_variance: f64,
) -> Result<GpPosterior<P>> {
    if !(noise_variance.is_finite() && noise_variance >= 0.0) {
        return input(format!(
            "noise variance must be finite and >= 0 (got {noise_variance})"
        ));
    }
    let y = data.outputs()?;
    if data.is_empty() {
        return Ok(GpPosterior {
            prior,
            x: data.x.clone(),
            factor: None,
            residual_weights: DVector::zeros(0),
            noise_variance,
        });
    }
    let k = prior.cov_sym(&data.x)?;
    let factor = SpdFactor::new(&k, noise_variance, "K_XX + σ²I")?;
    let residual = y - prior.mean_vector(&data.x)?;
    let residual_weights = factor.solve(&residual);
    Ok(GpPosterior {
        prior,
        x: data.x.clone(),
        factor: Some(factor),
        residual_weights,
        noise_variance,
    })
}

impl<P: GaussianProcess> GpPosterior<P> {
    pub fn prior(&self) -> &P {
        &self.prior
    }

    pub fn inputs(&self) -> &Points {
        &self.x
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// `(K_XX + σ²I)⁻¹ (Y − m_X)`.
    pub fn residual_weights(&self) -> &DVector<f64> {
        &self.residual_weights
    }

    /// Lower Cholesky factor of `K_XX + σ²I`; `None` without data.
    pub fn cholesky_factor(&self) -> Option<DMatrix<f64>> {
        self.factor.as_ref().map(|f| f.lower())
    }

    fn cross(&self, x: &[f64]) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(self.x.len());
        for (i, r) in self.x.rows().enumerate() {
            v[i] = self.prior.cov(r, x)?;
        }
        Ok(v)
    }

    pub fn posterior_mean(&self, x: &[f64]) -> Result<f64> {
        let m = self.prior.mean(x)?;
        if self.factor.is_none() {
            return Ok(m);
        }
        Ok(m + self.cross(x)?.dot(&self.residual_weights))
    }

    /// `k̄(x, y)` without clamping.
    pub fn posterior_cov_raw(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let prior = self.prior.cov(x, y)?;
        let Some(f) = &self.factor else {
            return Ok(prior);
        };
        let vx = f.half_solve(&self.cross(x)?);
        if bitwise_eq(x, y) {
            return Ok(prior - vx.norm_squared());
        }
        let vy = f.half_solve(&self.cross(y)?);
        Ok(prior - vx.dot(&vy))
    }

    /// `k̄(x, y)`; on the diagonal the value is clamped at 0.
    pub fn posterior_cov(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if bitwise_eq(x, y) {
            return self.posterior_variance(x);
        }
        self.posterior_cov_raw(x, y)
    }

    /// `k̄(x, x)` clamped at 0. Negative raw values are logged; beyond the
    /// roundoff allowance they are reported as numerical errors.
    pub fn posterior_variance(&self, x: &[f64]) -> Result<f64> {
        let raw = self.posterior_cov_raw(x, x)?;
        if raw < 0.0 {
            log::debug!("posterior variance {raw:e} clamped to 0 at {x:?}");
            if raw < -VARIANCE_ROUNDOFF * self.prior.cov(x, x)?.abs().max(1.0) {
                return Err(Error::Numerical(format!(
                    "posterior variance {raw:e} is negative beyond roundoff at {x:?}"
                )));
            }
        }
        Ok(raw.max(0.0))
    }

    pub fn posterior_mean_points(&self, xs: &Points) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(xs.len());
        for (i, r) in xs.rows().enumerate() {
            out[i] = self.posterior_mean(r)?;
        }
        Ok(out)
    }
}

impl<P: GaussianProcess> GaussianProcess for GpPosterior<P> {
    fn mean(&self, x: &[f64]) -> Result<f64> {
        self.posterior_mean(x)
    }

    fn cov(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.posterior_cov_raw(x, y)
    }

    fn cov_matrix(&self, a: &Points, b: &Points) -> Result<DMatrix<f64>> {
        let prior = self.prior.cov_matrix(a, b)?;
        let Some(f) = &self.factor else {
            return Ok(prior);
        };
        let mut va = self.prior.cov_matrix(&self.x, a)?;
        let mut vb = self.prior.cov_matrix(&self.x, b)?;
        let l = f.lower();
        l.solve_lower_triangular_mut(&mut va);
        l.solve_lower_triangular_mut(&mut vb);
        Ok(prior - va.transpose() * vb)
    }

    fn cov_sym(&self, x: &Points) -> Result<DMatrix<f64>> {
        let mut c = self.cov_matrix(x, x)?;
        crate::linalg::symmetrize(&mut c);
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn se() -> Kernel {
        Kernel::square_exponential(1.0).unwrap()
    }

    fn data(x: &[f64], y: &[f64]) -> Dataset {
        Dataset::labelled(Points::from_scalars(x).unwrap(), y.to_vec()).unwrap()
    }

    #[test]
    fn no_data_returns_prior() {
        let prior = GpPrior::with_mean(se(), |x| 2.0 * x[0]);
        let post = condition(prior, &data(&[], &[]), 0.0).unwrap();
        assert_eq!(post.posterior_mean(&[1.5]).unwrap(), 3.0);
        assert_eq!(post.posterior_cov(&[0.0], &[1.0]).unwrap(), (-1.0f64).exp());
        assert!(post.cholesky_factor().is_none());
    }

    #[test]
    fn scalar_update() {
        let post = condition(GpPrior::new(se()), &data(&[0.3], &[2.0]), 1.0).unwrap();
        assert!((post.posterior_mean(&[0.3]).unwrap() - 1.0).abs() < 1e-15);
        assert!((post.posterior_variance(&[0.3]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_point_instance_matches_dense_solve() {
        // numpy: K = [[1, e^-1], [e^-1, 1]] + 0.1 I, k = [e^-.25, e^-.25]
        let post = condition(GpPrior::new(se()), &data(&[0.0, 1.0], &[0.0, 1.0]), 0.1).unwrap();
        let m = post.posterior_mean(&[0.5]).unwrap();
        let v = post.posterior_variance(&[0.5]).unwrap();
        assert!((m - 0.530_561_816_745_578_5).abs() < 1e-12, "{m}");
        assert!((v - 0.173_596_083_301_512_55).abs() < 1e-12, "{v}");
    }

    #[test]
    fn interpolates_without_noise() {
        let x = [0.0, 0.35, 0.8, 1.4];
        let y = [1.0, -0.5, 0.25, 2.0];
        let post = condition(
            GpPrior::new(Kernel::matern(1.5, 0.5).unwrap()),
            &data(&x, &y),
            0.0,
        )
        .unwrap();
        for (xi, yi) in x.iter().zip(y) {
            assert!((post.posterior_mean(&[*xi]).unwrap() - yi).abs() < 1e-8);
            assert!(post.posterior_variance(&[*xi]).unwrap() < 1e-8);
        }
    }

    #[test]
    fn duplicate_inputs_without_noise_fail() {
        let err = condition(GpPrior::new(se()), &data(&[0.5, 0.5], &[0.0, 1.0]), 0.0).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn factor_reconstructs_system() {
        let d = data(&[0.0, 0.2, 0.9], &[1.0, 2.0, 3.0]);
        let post = condition(GpPrior::new(se()), &d, 0.3).unwrap();
        let l = post.cholesky_factor().unwrap();
        let mut k = se().gram_sym(&d.x).unwrap();
        for i in 0..3 {
            k[(i, i)] += 0.3;
        }
        let rel = (&l * l.transpose() - &k).abs().max() / k.abs().max();
        assert!(rel < 1e-10);
    }

    #[test]
    fn delta_prior_samples_are_standard_normal() {
        let prior = GpPrior::new(Kernel::delta(1.0).unwrap());
        let x = Points::from_scalars(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        let n = 100_000;
        let s = sample_prior(&prior, &x, n, 11).unwrap();
        for j in 0..4 {
            let col = s.column(j);
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            assert!(mean.abs() < 0.02, "{mean}");
            assert!((var - 1.0).abs() < 0.03, "{var}");
        }
    }

    #[test]
    fn sampling_edge_cases_and_determinism() {
        let prior = GpPrior::new(se());
        let x = Points::from_scalars(&[0.0, 0.5]).unwrap();
        assert_eq!(sample_prior(&prior, &x, 0, 1).unwrap().shape(), (0, 2));
        let a = sample_prior(&prior, &x, 5, 3).unwrap();
        let b = sample_prior(&prior, &x, 5, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_prior(&prior, &x, 5, 4).unwrap());
    }
}
