//! Kernel mean embeddings of discrete measures, MMD, and shrinkage
//! estimators of kernel means.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{input, numerical, Result};
use crate::kernels::Kernel;
use crate::linalg::{psd_sqrt, SpdFactor};
use crate::points::{unique_rows, Points};

/// `Σ w_i δ_{a_i}`; weights may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub atoms: Points,
    pub weights: DVector<f64>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Points, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() {
            return input(format!(
                "{} weights for {} atoms",
                weights.len(),
                atoms.len()
            ));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return input("non-finite measure weight");
        }
        Ok(Self {
            atoms,
            weights: DVector::from_vec(weights),
        })
    }

    /// Empirical measure `(1/n) Σ δ_{x_i}`.
    pub fn uniform(atoms: Points) -> Result<Self> {
        let n = atoms.len();
        if n == 0 {
            return input("uniform measure needs at least one atom");
        }
        Self::new(atoms, vec![1.0 / n as f64; n])
    }

    pub fn point_mass(x: &[f64]) -> Result<Self> {
        Self::new(Points::new(x.to_vec(), x.len())?, vec![1.0])
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms.dim()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.sum()
    }

    pub fn is_probability(&self) -> bool {
        self.weights.iter().all(|w| *w >= 0.0) && (self.total_mass() - 1.0).abs() <= 1e-10
    }

    /// `self − other` on the merged atom set, with bitwise-equal atoms
    /// combined. Returns the distinct atoms in lexicographic order and their
    /// signed weights; swapping the measures negates the weights exactly.
    pub fn signed_difference(&self, other: &DiscreteMeasure) -> Result<(Points, DVector<f64>)> {
        let z = self.atoms.concat(&other.atoms)?;
        let (atoms, map) = unique_rows(&z);
        let mut plus = vec![0.0; atoms.len()];
        let mut minus = vec![0.0; atoms.len()];
        for (i, &m) in map.iter().enumerate() {
            if i < self.len() {
                plus[m] += self.weights[i];
            } else {
                minus[m] += other.weights[i - self.len()];
            }
        }
        let mut order: Vec<usize> = (0..atoms.len()).collect();
        order.sort_by(|&a, &b| {
            atoms
                .row(a)
                .iter()
                .zip(atoms.row(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let c = DVector::from_iterator(order.len(), order.iter().map(|&i| plus[i] - minus[i]));
        Ok((atoms.select(&order), c))
    }
}

/// `μ(x) = Σ w_i k(x, a_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMean {
    pub kernel: Kernel,
    pub measure: DiscreteMeasure,
}

impl KernelMean {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if self.measure.is_empty() {
            return Ok(0.0);
        }
        Ok(self
            .kernel
            .cross(&self.measure.atoms, x)?
            .dot(&self.measure.weights))
    }

    pub fn eval_points(&self, xs: &Points) -> Result<DVector<f64>> {
        if self.measure.is_empty() {
            return Ok(DVector::zeros(xs.len()));
        }
        Ok(self.kernel.gram(xs, &self.measure.atoms)? * &self.measure.weights)
    }

    /// `⟨μ_self, μ_other⟩ = Σ_i Σ_j w_i v_j k(a_i, b_j)`.
    pub fn inner(&self, other: &KernelMean) -> Result<f64> {
        if self.kernel != other.kernel {
            return input("kernel means live in different spaces");
        }
        if self.measure.is_empty() || other.measure.is_empty() {
            return Ok(0.0);
        }
        let k = self.kernel.gram(&self.measure.atoms, &other.measure.atoms)?;
        Ok(self.measure.weights.dot(&(k * &other.measure.weights)))
    }
}

pub fn mean_embed(kernel: &Kernel, measure: &DiscreteMeasure) -> Result<KernelMean> {
    kernel.validate()?;
    kernel.check_dim(measure.dim())?;
    Ok(KernelMean {
        kernel: kernel.clone(),
        measure: measure.clone(),
    })
}

/// `cᵀ K_ZZ c` on the merged atoms, without clamping.
pub fn mmd_squared(kernel: &Kernel, p: &DiscreteMeasure, q: &DiscreteMeasure) -> Result<f64> {
    let (z, c) = p.signed_difference(q)?;
    if z.is_empty() {
        return Ok(0.0);
    }
    let k = kernel.gram_sym(&z)?;
    Ok(c.dot(&(k * &c)))
}

/// `‖μ_P − μ_Q‖_{H_k}`.
pub fn mmd(kernel: &Kernel, p: &DiscreteMeasure, q: &DiscreteMeasure) -> Result<f64> {
    let q2 = mmd_squared(kernel, p, q)?;
    if q2 < -1e-10 {
        return numerical(format!("MMD quadratic form is {q2:e} < 0"));
    }
    Ok(q2.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AverageCaseReport {
    /// `‖μ_P‖² − 2⟨μ_P, μ_Q⟩ + ‖μ_Q‖²`.
    pub mmd_squared: f64,
    /// `Var(Pf − Qf)` for `f ~ GP(0, k)`, i.e. `cᵀ K_ZZ c`.
    pub gp_variance: f64,
    pub gap: f64,
    pub mc_estimate: f64,
    pub mc_se: f64,
}

/// Squared MMD from the kernel-mean expansion against the exact variance of
/// `Pf − Qf` under the GP prior, plus a Monte-Carlo estimate of that
/// variance from `draws` prior samples.
pub fn verify_average_case(
    kernel: &Kernel,
    p: &DiscreteMeasure,
    q: &DiscreteMeasure,
    draws: usize,
    seed: u64,
) -> Result<AverageCaseReport> {
    let mp = mean_embed(kernel, p)?;
    let mq = mean_embed(kernel, q)?;
    let mmd2 = mp.inner(&mp)? - 2.0 * mp.inner(&mq)? + mq.inner(&mq)?;
    let gp_variance = mmd_squared(kernel, p, q)?;
    let (mc_estimate, mc_se) = average_case_monte_carlo(kernel, p, q, draws, seed)?;
    Ok(AverageCaseReport {
        mmd_squared: mmd2,
        gp_variance,
        gap: (mmd2 - gp_variance).abs(),
        mc_estimate,
        mc_se,
    })
}

/// Mean and standard error of `(Pf − Qf)²` over GP prior draws.
pub fn average_case_monte_carlo(
    kernel: &Kernel,
    p: &DiscreteMeasure,
    q: &DiscreteMeasure,
    draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let (z, c) = p.signed_difference(q)?;
    let values = if z.is_empty() {
        vec![0.0; draws]
    } else {
        let r = psd_sqrt(&kernel.gram_sym(&z)?);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = DVector::zeros(z.len());
        (0..draws)
            .map(|_| {
                for v in u.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let f = &r * &u;
                let s = c.dot(&f);
                s * s
            })
            .collect()
    };
    Ok(crate::stats::mean_and_standard_error(&values))
}

/// Shrinkage estimator with weights `(K_XX + nλI)⁻¹ μ̂_X` on the sample.
pub fn skme(kernel: &Kernel, sample: &Points, lambda: f64) -> Result<KernelMean> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return input(format!("lambda must be finite and > 0 (got {lambda})"));
    }
    let n = sample.len();
    if n == 0 {
        return input("shrinkage estimator needs a non-empty sample");
    }
    let k = kernel.gram_sym(sample)?;
    let mu_hat = empirical_mean_at_sample(&k);
    let factor = SpdFactor::new(&k, n as f64 * lambda, "K_XX + nλI")?;
    let w = factor.solve(&mu_hat);
    Ok(KernelMean {
        kernel: kernel.clone(),
        measure: DiscreteMeasure::new(sample.clone(), w.iter().copied().collect())?,
    })
}

/// `μ̂_X`: the empirical kernel mean `(1/n) Σ_j k(·, x_j)` at every `x_i`.
pub fn empirical_mean_at_sample(gram: &DMatrix<f64>) -> DVector<f64> {
    let n = gram.ncols();
    DVector::from_iterator(
        gram.nrows(),
        gram.row_iter().map(|r| r.sum() / n as f64),
    )
}

/// Posterior mean and variance of the kernel mean at one point under the
/// prior `GP(0, k^θ)` and observations `μ̂_X` with noise `σ²`.
pub fn bayes_kmean_posterior(
    k_theta: &DMatrix<f64>,
    mu_hat: &DVector<f64>,
    noise_variance: f64,
    k_theta_x: &DVector<f64>,
    k_theta_xx: f64,
) -> Result<(f64, f64)> {
    if !(noise_variance.is_finite() && noise_variance > 0.0) {
        return input(format!(
            "noise variance must be finite and > 0 (got {noise_variance})"
        ));
    }
    let n = k_theta.nrows();
    if k_theta.shape() != (n, n) || mu_hat.len() != n || k_theta_x.len() != n {
        return input("inconsistent dimensions in kernel-mean posterior");
    }
    let factor = SpdFactor::new(k_theta, noise_variance, "K^θ_XX + σ²I")?;
    let mean = k_theta_x.dot(&factor.solve(mu_hat));
    let variance = k_theta_xx - factor.inverse_quad_form(k_theta_x);
    Ok((mean, variance))
}
