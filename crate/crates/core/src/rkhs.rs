//! Finite representer expansions `f = Σ c_i k(·, z_i)`.

use nalgebra::DVector;

use crate::error::{input, Result};
use crate::kernels::Kernel;
use crate::points::Points;

/// An element of `H_k` in the span of finitely many representers.
#[derive(Debug, Clone, PartialEq)]
pub struct RkhsFunction {
    pub kernel: Kernel,
    pub centers: Points,
    pub coefficients: DVector<f64>,
}

impl RkhsFunction {
    pub fn new(kernel: Kernel, centers: Points, coefficients: DVector<f64>) -> Result<Self> {
        if centers.len() != coefficients.len() {
            return input(format!(
                "{} coefficients for {} centers",
                coefficients.len(),
                centers.len()
            ));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return input("non-finite coefficient");
        }
        kernel.validate()?;
        kernel.check_dim(centers.dim())?;
        Ok(Self {
            kernel,
            centers,
            coefficients,
        })
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.kernel.cross(&self.centers, x)?.dot(&self.coefficients))
    }

    pub fn eval_points(&self, xs: &Points) -> Result<DVector<f64>> {
        Ok(self.kernel.gram(xs, &self.centers)? * &self.coefficients)
    }

    /// `‖f‖_{H_k} = sqrt(cᵀ K_ZZ c)`.
    pub fn norm(&self) -> Result<f64> {
        Ok(self.norm_squared()?.max(0.0).sqrt())
    }

    pub fn norm_squared(&self) -> Result<f64> {
        let k = self.kernel.gram_sym(&self.centers)?;
        Ok(self.coefficients.dot(&(k * &self.coefficients)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_representer_norm() {
        let k = Kernel::scaled(Kernel::square_exponential(1.0).unwrap(), 4.0).unwrap();
        let f = RkhsFunction::new(
            k,
            Points::from_scalars(&[0.5]).unwrap(),
            DVector::from_vec(vec![3.0]),
        )
        .unwrap();
        assert!((f.norm().unwrap() - 6.0).abs() < 1e-14);
        assert!((f.eval(&[0.5]).unwrap() - 12.0).abs() < 1e-14);
    }
}
