//! Posterior variance as RKHS worst-case error, and related checks.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{input, numerical, Error, Result};
use crate::gp::{condition, GpPrior, GpPosterior};
use crate::kernels::Kernel;
use crate::linalg::SpdFactor;
use crate::points::{Dataset, Points};
use crate::rkhs::RkhsFunction;

/// Both sides of an identity and their absolute difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

impl IdentityReport {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        Self {
            lhs,
            rhs,
            gap: (lhs - rhs).abs(),
        }
    }
}

/// `w^σ(x) = (K_XX + σ² I)⁻¹ k_Xx`.
#[derive(Debug, Clone)]
pub struct WeightVector {
    pub nodes: Points,
    pub query: Vec<f64>,
    pub weights: DVector<f64>,
    pub noise_variance: f64,
}

impl WeightVector {
    pub fn new(kernel: &Kernel, nodes: &Points, noise_variance: f64, x: &[f64]) -> Result<Self> {
        let k = kernel.gram_sym(nodes)?;
        let factor = SpdFactor::new(&k, noise_variance, "K_XX + σ²I")?;
        let kx = kernel.cross(nodes, x)?;
        Ok(Self {
            nodes: nodes.clone(),
            query: x.to_vec(),
            weights: factor.solve(&kx),
            noise_variance,
        })
    }
}

/// `k(x,x) − 2 wᵀ k_Xx + wᵀ K_XX w` without clamping.
pub fn worst_case_error_squared(
    kernel: &Kernel,
    nodes: &Points,
    weights: &DVector<f64>,
    x: &[f64],
) -> Result<f64> {
    if weights.len() != nodes.len() {
        return input(format!(
            "{} weights for {} nodes",
            weights.len(),
            nodes.len()
        ));
    }
    let kxx = kernel.eval(x, x)?;
    if nodes.is_empty() {
        return Ok(kxx);
    }
    let kx = kernel.cross(nodes, x)?;
    let k = kernel.gram_sym(nodes)?;
    Ok(kxx - 2.0 * weights.dot(&kx) + weights.dot(&(k * weights)))
}

/// `‖k(·,x) − Σ w_i k(·,x_i)‖_{H_k}`, which equals the supremum of
/// `f(x) − Σ w_i f(x_i)` over the unit ball of `H_k`.
pub fn worst_case_error(
    kernel: &Kernel,
    nodes: &Points,
    weights: &DVector<f64>,
    x: &[f64],
) -> Result<f64> {
    let q = worst_case_error_squared(kernel, nodes, weights, x)?;
    if q < -1e-10 {
        return numerical(format!("worst-case error quadratic form is {q:e} < 0"));
    }
    Ok(q.max(0.0).sqrt())
}

/// The unit-norm function attaining the worst case: the normalized residual
/// representer `k(·,x) − Σ w_i k(·,x_i)`. `None` when the residual vanishes.
pub fn worst_case_witness(
    kernel: &Kernel,
    nodes: &Points,
    weights: &DVector<f64>,
    x: &[f64],
) -> Result<Option<RkhsFunction>> {
    let e = worst_case_error(kernel, nodes, weights, x)?;
    if e == 0.0 {
        return Ok(None);
    }
    let centers = nodes.concat(&Points::new(x.to_vec(), x.len())?)?;
    let mut c = DVector::zeros(nodes.len() + 1);
    for i in 0..nodes.len() {
        c[i] = -weights[i] / e;
    }
    c[nodes.len()] = 1.0 / e;
    Ok(Some(RkhsFunction::new(kernel.clone(), centers, c)?))
}

fn noise_free_posterior(kernel: &Kernel, nodes: &Points) -> Result<GpPosterior> {
    let data = Dataset::labelled(nodes.clone(), vec![0.0; nodes.len()])?;
    condition(GpPrior::new(kernel.clone()), &data, 0.0)
}

/// `sqrt(k̄(x,x))` for noise-free conditioning against the worst-case error
/// of the weights `K_XX⁻¹ k_Xx`.
pub fn verify_noise_free_identity(
    kernel: &Kernel,
    nodes: &Points,
    x: &[f64],
) -> Result<IdentityReport> {
    let post = noise_free_posterior(kernel, nodes)?;
    let lhs = post.posterior_variance(x)?.sqrt();
    let w = WeightVector::new(kernel, nodes, 0.0, x)?;
    let rhs = worst_case_error(kernel, nodes, &w.weights, x)?;
    Ok(IdentityReport::new(lhs, rhs))
}

/// `sqrt(k̄(x,x) + σ²)` against the worst-case error in the RKHS of
/// `k + σ²δ` with weights `(K_XX + σ²I)⁻¹ k_Xx`. The query must differ
/// from every node.
pub fn verify_noisy_identity(
    kernel: &Kernel,
    nodes: &Points,
    noise_variance: f64,
    x: &[f64],
) -> Result<IdentityReport> {
    if !(noise_variance.is_finite() && noise_variance > 0.0) {
        return input(format!(
            "noise variance must be finite and > 0 (got {noise_variance})"
        ));
    }
    if nodes.contains_bitwise(x) {
        return Err(Error::Precondition(
            "the noisy identity requires the query to differ from every training input".into(),
        ));
    }
    let data = Dataset::labelled(nodes.clone(), vec![0.0; nodes.len()])?;
    let post = condition(GpPrior::new(kernel.clone()), &data, noise_variance)?;
    let lhs = (post.posterior_variance(x)? + noise_variance).sqrt();
    let w = WeightVector::new(kernel, nodes, noise_variance, x)?;
    let noisy = kernel.with_noise(noise_variance)?;
    let rhs = worst_case_error(&noisy, nodes, &w.weights, x)?;
    Ok(IdentityReport::new(lhs, rhs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `(m̄(x) − f(x))² ≤ ‖f‖² k̄(x,x)` where `m̄` interpolates `f` on `nodes`.
pub fn verify_error_bound(
    kernel: &Kernel,
    nodes: &Points,
    f: &RkhsFunction,
    x: &[f64],
) -> Result<BoundReport> {
    if f.kernel != *kernel {
        return input("function and bound must use the same kernel");
    }
    let fx = f.eval_points(nodes)?;
    let data = Dataset::labelled(nodes.clone(), fx.iter().copied().collect())?;
    let post = condition(GpPrior::new(kernel.clone()), &data, 0.0)?;
    let err = post.posterior_mean(x)? - f.eval(x)?;
    let lhs = err * err;
    let rhs = f.norm_squared()?.max(0.0) * post.posterior_variance(x)?;
    Ok(BoundReport {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-10,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightObjectiveReport {
    /// Objective at the optimal weights.
    pub objective: f64,
    /// Smallest objective found among the perturbed weight vectors.
    pub min_perturbed: f64,
    /// `‖2 (K_XX + σ²I) w − 2 k_Xx‖`.
    pub gradient_norm: f64,
    pub passed: bool,
}

/// Checks that `w^σ(x)` minimizes `e(w)² + σ² ‖w‖²`, where `e` is the
/// worst-case error, by random perturbations of size 1e-2 and 1e-3 and by
/// the gradient norm.
pub fn verify_weight_objective(
    kernel: &Kernel,
    nodes: &Points,
    noise_variance: f64,
    x: &[f64],
    seed: u64,
) -> Result<WeightObjectiveReport> {
    if !(noise_variance.is_finite() && noise_variance > 0.0) {
        return input(format!(
            "noise variance must be finite and > 0 (got {noise_variance})"
        ));
    }
    let n = nodes.len();
    let w = WeightVector::new(kernel, nodes, noise_variance, x)?.weights;
    let k = kernel.gram_sym(nodes)?;
    let kx = kernel.cross(nodes, x)?;
    let kxx = kernel.eval(x, x)?;
    let objective = |v: &DVector<f64>| {
        kxx - 2.0 * v.dot(&kx) + v.dot(&(&k * v)) + noise_variance * v.norm_squared()
    };
    let base = objective(&w);
    let mut shifted = k.clone();
    for i in 0..n {
        shifted[(i, i)] += noise_variance;
    }
    let gradient_norm = (2.0 * (&shifted * &w) - 2.0 * &kx).norm();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_perturbed = f64::INFINITY;
    if n > 0 {
        for _ in 0..100 {
            let mut u = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let norm = u.norm();
            if norm == 0.0 {
                continue;
            }
            u /= norm;
            for eps in [1e-2, 1e-3] {
                min_perturbed = min_perturbed.min(objective(&(&w + eps * &u)));
            }
        }
    }
    let slack = 1e-14 * base.abs().max(kxx.abs()).max(1.0);
    let passed = gradient_norm <= 1e-8 && (n == 0 || min_perturbed >= base - slack);
    Ok(WeightObjectiveReport {
        objective: base,
        min_perturbed,
        gradient_norm,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn se() -> Kernel {
        Kernel::square_exponential(1.0).unwrap()
    }

    #[test]
    fn exact_reproduction_and_zero_weights() {
        let k = Kernel::matern(2.5, 0.7).unwrap();
        let nodes = Points::from_scalars(&[0.1, 0.6, 1.2]).unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert_eq!(worst_case_error(&k, &nodes, &e1, &[0.1]).unwrap(), 0.0);
        let zero = DVector::zeros(3);
        assert!((worst_case_error(&k, &nodes, &zero, &[0.4]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_node_noise_free() {
        let nodes = Points::from_scalars(&[0.0]).unwrap();
        let r = verify_noise_free_identity(&se(), &nodes, &[1.0]).unwrap();
        let expected = (1.0 - (-2.0f64).exp()).sqrt();
        assert!((r.lhs - expected).abs() < 1e-14);
        assert!((r.rhs - expected).abs() < 1e-14);
    }

    #[test]
    fn query_at_node_gives_zero_on_both_sides() {
        let nodes = Points::from_scalars(&[0.0, 0.5, 1.0]).unwrap();
        let r = verify_noise_free_identity(&Kernel::matern(0.5, 1.0).unwrap(), &nodes, &[0.5]).unwrap();
        assert!(r.lhs < 1e-7 && r.rhs < 1e-7, "{r:?}");
    }

    #[test]
    fn noisy_identity_precondition() {
        let nodes = Points::from_scalars(&[0.0, 0.5]).unwrap();
        assert!(matches!(
            verify_noisy_identity(&se(), &nodes, 0.1, &[0.5]),
            Err(Error::Precondition(_))
        ));
        let r = verify_noisy_identity(&se(), &nodes, 0.1, &[0.25]).unwrap();
        assert!(r.gap <= 1e-8, "{r:?}");
    }

    #[test]
    fn noisy_identity_approaches_noise_free() {
        let k = Kernel::matern(1.5, 0.4).unwrap();
        let nodes = Points::from_scalars(&[0.0, 0.3, 0.7]).unwrap();
        let a = verify_noisy_identity(&k, &nodes, 1e-10, &[0.45]).unwrap();
        let b = verify_noise_free_identity(&k, &nodes, &[0.45]).unwrap();
        assert!((a.lhs - b.lhs).abs() <= 1e-6);
        assert!((a.rhs - b.rhs).abs() <= 1e-6);
    }

    #[test]
    fn error_bound_trivial_cases() {
        let k = se();
        let nodes = Points::from_scalars(&[0.0, 0.8]).unwrap();
        let zero = RkhsFunction::new(k.clone(), nodes.clone(), DVector::zeros(2)).unwrap();
        let r = verify_error_bound(&k, &nodes, &zero, &[0.3]).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        assert!(r.holds);
        let rep = RkhsFunction::new(
            k.clone(),
            Points::from_scalars(&[0.0]).unwrap(),
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        let r = verify_error_bound(&k, &nodes, &rep, &[0.0]).unwrap();
        assert!(r.lhs < 1e-20 && r.holds);
    }

    #[test]
    fn weight_objective_scalar_and_heavy_noise() {
        let k = se();
        let nodes = Points::from_scalars(&[0.0]).unwrap();
        let w = WeightVector::new(&k, &nodes, 0.5, &[0.4]).unwrap();
        let expected = (-0.16f64).exp() / 1.5;
        assert!((w.weights[0] - expected).abs() < 1e-15);

        let nodes = Points::from_scalars(&[0.0, 0.2, 0.9]).unwrap();
        let w = WeightVector::new(&k, &nodes, 1e6, &[0.4]).unwrap();
        let kx = k.cross(&nodes, &[0.4]).unwrap();
        assert!(w.weights.norm() <= kx.norm() / 1e6);
        let r = verify_weight_objective(&k, &nodes, 0.01, &[0.4], 5).unwrap();
        assert!(r.passed, "{r:?}");
    }
}
