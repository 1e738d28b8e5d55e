//! Kernel ridge regression and minimum-norm kernel interpolation.

use nalgebra::DVector;

use crate::error::{input, Result};
use crate::kernels::Kernel;
use crate::linalg::SpdFactor;
use crate::points::{Dataset, Points};
use crate::rkhs::RkhsFunction;

/// `f̂(x) = Σ α_i k(x, x_i)` with optional clipping of reported predictions.
#[derive(Debug, Clone)]
pub struct KrrEstimator {
    kernel: Kernel,
    x: Points,
    coefficients: DVector<f64>,
    regularization: f64,
    clip_bound: Option<f64>,
}

/// Solves `(K_XX + nλ I) α = Y`, the minimizer of
/// `(1/n) Σ (y_i − f(x_i))² + λ ‖f‖²`.
pub fn fit_krr(kernel: &Kernel, data: &Dataset, lambda: f64) -> Result<KrrEstimator> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return input(format!("lambda must be finite and > 0 (got {lambda})"));
    }
    fit(kernel, data, lambda)
}

/// Minimum-norm interpolant `α = K_XX⁻¹ Y`.
pub fn fit_interpolant(kernel: &Kernel, data: &Dataset) -> Result<KrrEstimator> {
    fit(kernel, data, 0.0)
}

fn fit(kernel: &Kernel, data: &Dataset, lambda: f64) -> Result<KrrEstimator> {
    let y = data.outputs()?;
    let n = data.len();
    if n == 0 {
        return input("kernel ridge regression needs at least one observation");
    }
    let k = kernel.gram_sym(&data.x)?;
    let factor = SpdFactor::new(&k, n as f64 * lambda, "K_XX + nλI")?;
    Ok(KrrEstimator {
        kernel: kernel.clone(),
        x: data.x.clone(),
        coefficients: factor.solve(y),
        regularization: lambda,
        clip_bound: None,
    })
}

/// `(1/n) Σ (y_i − f(x_i))² + λ ‖f‖²_{H_k}`.
pub fn krr_objective(f: &RkhsFunction, data: &Dataset, lambda: f64) -> Result<f64> {
    let y = data.outputs()?;
    if data.is_empty() {
        return input("empty dataset");
    }
    let fx = f.eval_points(&data.x)?;
    let loss = (y - fx).norm_squared() / data.len() as f64;
    Ok(loss + lambda * f.norm_squared()?)
}

impl KrrEstimator {
    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn inputs(&self) -> &Points {
        &self.x
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    pub fn clip_bound(&self) -> Option<f64> {
        self.clip_bound
    }

    /// Clips reported predictions to `[-m, m]`.
    pub fn with_clip(mut self, m: f64) -> Result<Self> {
        if !(m.is_finite() && m > 0.0) {
            return input(format!("clip bound must be finite and > 0 (got {m})"));
        }
        self.clip_bound = Some(m);
        Ok(self)
    }

    pub fn predict_unclipped(&self, x: &[f64]) -> Result<f64> {
        Ok(self.kernel.cross(&self.x, x)?.dot(&self.coefficients))
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let v = self.predict_unclipped(x)?;
        Ok(match self.clip_bound {
            Some(m) => v.clamp(-m, m),
            None => v,
        })
    }

    pub fn predict_points(&self, xs: &Points) -> Result<DVector<f64>> {
        let mut v = self.kernel.gram(xs, &self.x)? * &self.coefficients;
        if let Some(m) = self.clip_bound {
            v.apply(|t| *t = t.clamp(-m, m));
        }
        Ok(v)
    }

    /// `sqrt(αᵀ K_XX α)`.
    pub fn rkhs_norm(&self) -> Result<f64> {
        self.as_function().norm()
    }

    pub fn as_function(&self) -> RkhsFunction {
        RkhsFunction {
            kernel: self.kernel.clone(),
            centers: self.x.clone(),
            coefficients: self.coefficients.clone(),
        }
    }
}
