//! Kernel and Bayesian quadrature against discrete target measures, fill
//! distances, and the posterior-variance contraction experiment.

use nalgebra::DVector;
use serde::Serialize;

use crate::embeddings::{mean_embed, mmd, DiscreteMeasure};
use crate::error::{input, Error, Result};
use crate::gp::{condition, GpPrior};
use crate::kernels::Kernel;
use crate::linalg::SpdFactor;
use crate::points::{Dataset, Points};
use crate::stats::fit_slope;

/// Weights `w = (K_XX + nλI)⁻¹ μ_X` for integrating against a target `P`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub kernel: Kernel,
    pub nodes: Points,
    pub weights: DVector<f64>,
    /// `μ_P` at the nodes.
    pub target_mean_at_nodes: DVector<f64>,
    /// `∬ k dP dP`.
    pub target_double_integral: f64,
    pub regularization: f64,
    factor: SpdFactor,
}

pub fn kq_weights(
    kernel: &Kernel,
    nodes: &Points,
    target: &DiscreteMeasure,
    lambda: f64,
) -> Result<QuadratureRule> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return input(format!("lambda must be finite and >= 0 (got {lambda})"));
    }
    let n = nodes.len();
    if n == 0 {
        return input("quadrature needs at least one node");
    }
    if target.dim() != nodes.dim() {
        return input(format!(
            "target has dimension {}, nodes have {}",
            target.dim(),
            nodes.dim()
        ));
    }
    let k = kernel.gram_sym(nodes)?;
    let mu = mean_embed(kernel, target)?.eval_points(nodes)?;
    let mut double = 0.0;
    for (a, wa) in target.atoms.rows().zip(target.weights.iter()) {
        for (b, wb) in target.atoms.rows().zip(target.weights.iter()) {
            double += wa * wb * kernel.eval(a, b)?;
        }
    }
    let factor = SpdFactor::new(&k, n as f64 * lambda, "K_XX + nλI")?;
    let weights = factor.solve(&mu);
    Ok(QuadratureRule {
        kernel: kernel.clone(),
        nodes: nodes.clone(),
        weights,
        target_mean_at_nodes: mu,
        target_double_integral: double,
        regularization: lambda,
        factor,
    })
}

impl QuadratureRule {
    /// Observation noise matching the regularization, `σ² = nλ`.
    pub fn noise_variance(&self) -> f64 {
        self.nodes.len() as f64 * self.regularization
    }

    /// `Σ w_i f_i`.
    pub fn apply(&self, f_values: &DVector<f64>) -> Result<f64> {
        self.check_len(f_values)?;
        Ok(self.weights.dot(f_values))
    }

    /// The rule as a signed measure on its nodes.
    pub fn as_measure(&self) -> DiscreteMeasure {
        DiscreteMeasure {
            atoms: self.nodes.clone(),
            weights: self.weights.clone(),
        }
    }

    fn check_len(&self, f_values: &DVector<f64>) -> Result<()> {
        if f_values.len() != self.nodes.len() {
            return input(format!(
                "{} function values for {} nodes",
                f_values.len(),
                self.nodes.len()
            ));
        }
        Ok(())
    }
}

/// Posterior mean `μ_Xᵀ (K_XX + σ²I)⁻¹ f` and variance
/// `∬k dP dP − μ_Xᵀ (K_XX + σ²I)⁻¹ μ_X` of `∫ f dP`, with `σ² = nλ`
/// taken from the rule.
pub fn bq_posterior(rule: &QuadratureRule, f_values: &DVector<f64>) -> Result<(f64, f64)> {
    rule.check_len(f_values)?;
    let mean = rule.target_mean_at_nodes.dot(&rule.factor.solve(f_values));
    let variance =
        rule.target_double_integral - rule.factor.inverse_quad_form(&rule.target_mean_at_nodes);
    Ok((mean, variance))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureIdentityReport {
    pub variance: f64,
    pub mmd_squared: f64,
    pub gap: f64,
}

/// BQ posterior variance against the squared MMD between the weighted nodes
/// and the target. Requires an unregularized rule.
pub fn verify_bq_kq_identity(
    rule: &QuadratureRule,
    target: &DiscreteMeasure,
) -> Result<QuadratureIdentityReport> {
    if rule.regularization != 0.0 {
        return Err(Error::Precondition(
            "the quadrature identity holds for unregularized rules only".into(),
        ));
    }
    let (_, variance) = bq_posterior(rule, &DVector::zeros(rule.nodes.len()))?;
    let m = mmd(&rule.kernel, &rule.as_measure(), target)?;
    let mmd_squared = m * m;
    Ok(QuadratureIdentityReport {
        variance,
        mmd_squared,
        gap: (variance - mmd_squared).abs(),
    })
}

/// An axis-aligned box `Π [lo_j, hi_j]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Domain {
    pub bounds: Vec<(f64, f64)>,
}

impl Domain {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return input("domain needs at least one axis");
        }
        for &(lo, hi) in &bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return input(format!("invalid axis [{lo}, {hi}]"));
            }
        }
        Ok(Self { bounds })
    }

    pub fn unit(dim: usize) -> Result<Self> {
        Self::new(vec![(0.0, 1.0); dim])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }
}

const MAX_FILL_CANDIDATES: usize = 50_000_000;

/// `sup { min_i ‖y − x_i‖ : y ∈ grid ∩ B(x, ρ) }` over a grid of step at most
/// `resolution` covering the domain. Grid coordinates on an axis `[lo, hi]`
/// with `m` cells are `lo + (hi − lo) i / m`.
pub fn fill_distance(
    domain: &Domain,
    nodes: &Points,
    x: &[f64],
    rho: f64,
    resolution: f64,
) -> Result<f64> {
    let d = domain.dim();
    if x.len() != d || nodes.dim() != d {
        return input("domain, nodes and query must share a dimension");
    }
    if !(resolution.is_finite() && resolution > 0.0) {
        return input(format!("resolution must be finite and > 0 (got {resolution})"));
    }
    if !(rho.is_finite() && rho > 0.0) {
        return input(format!("rho must be finite and > 0 (got {rho})"));
    }
    if nodes.is_empty() {
        return input("fill distance needs at least one node");
    }
    // per axis: cell count and the index range within [x − ρ, x + ρ]
    let mut axes: Vec<(f64, f64, usize, usize, usize)> = Vec::with_capacity(d);
    let mut total: usize = 1;
    for (j, &(lo, hi)) in domain.bounds.iter().enumerate() {
        let m = ((hi - lo) / resolution).ceil().max(1.0) as usize;
        let step = (hi - lo) / m as f64;
        let first = (((x[j] - rho - lo) / step).floor().max(0.0) as usize).min(m);
        let last = (((x[j] + rho - lo) / step).ceil().max(0.0) as usize).min(m);
        total = total.saturating_mul(last - first + 1);
        if total > MAX_FILL_CANDIDATES {
            return input("fill-distance grid too fine for this radius");
        }
        axes.push((lo, hi, m, first, last));
    }
    let coord = |j: usize, i: usize| {
        let (lo, hi, m, _, _) = axes[j];
        lo + (hi - lo) * (i as f64 / m as f64)
    };
    let mut idx: Vec<usize> = axes.iter().map(|a| a.3).collect();
    let mut y = vec![0.0; d];
    let mut best: Option<f64> = None;
    'outer: loop {
        for j in 0..d {
            y[j] = coord(j, idx[j]);
        }
        let r2: f64 = y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        if r2 <= rho * rho {
            let nearest = nodes
                .rows()
                .map(|p| p.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt();
            best = Some(best.map_or(nearest, |b: f64| b.max(nearest)));
        }
        for j in (0..d).rev() {
            if idx[j] < axes[j].4 {
                idx[j] += 1;
                continue 'outer;
            }
            idx[j] = axes[j].3;
        }
        break;
    }
    best.ok_or_else(|| Error::Input("no grid point of the domain lies within rho of the query".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub grid_sizes: Vec<usize>,
    pub fill_distances: Vec<f64>,
    pub posterior_variances: Vec<f64>,
    pub log_h: Vec<f64>,
    pub log_variance: Vec<f64>,
    pub slope: f64,
    /// `2s − d` with `s = α + d/2`.
    pub theoretical_exponent: f64,
}

/// Noise-free posterior variance at `x` for cell-centred grids with `n`
/// nodes per axis, against the local fill distance. Returns the fitted
/// log-log slope.
pub fn variance_contraction_experiment(
    kernel: &Kernel,
    domain: &Domain,
    x: &[f64],
    grid_sizes: &[usize],
    rho: f64,
    resolution: f64,
) -> Result<ContractionReport> {
    let Kernel::Matern { order, .. } = kernel else {
        return input("the contraction experiment needs a Matérn kernel");
    };
    if grid_sizes.len() < 3 {
        return input(format!(
            "the contraction experiment needs at least 3 grid sizes (got {})",
            grid_sizes.len()
        ));
    }
    if grid_sizes.contains(&0) {
        return input("grid sizes must be positive");
    }
    let mut report = ContractionReport {
        grid_sizes: grid_sizes.to_vec(),
        fill_distances: Vec::new(),
        posterior_variances: Vec::new(),
        log_h: Vec::new(),
        log_variance: Vec::new(),
        slope: f64::NAN,
        theoretical_exponent: 2.0 * order.alpha(),
    };
    for &n in grid_sizes {
        let nodes = cell_centred_grid(domain, n)?;
        let h = fill_distance(domain, &nodes, x, rho, resolution)?;
        let data = Dataset::labelled(nodes.clone(), vec![0.0; nodes.len()])?;
        let post = condition(GpPrior::new(kernel.clone()), &data, 0.0)?;
        let v = post.posterior_variance(x)?;
        if v <= 0.0 || h <= 0.0 {
            return Err(Error::Numerical(format!(
                "grid {n}: variance {v:e} or fill distance {h:e} not positive"
            )));
        }
        report.fill_distances.push(h);
        report.posterior_variances.push(v);
        report.log_h.push(h.ln());
        report.log_variance.push(v.ln());
    }
    report.slope = fit_slope(&report.log_h, &report.log_variance)?;
    Ok(report)
}

/// Tensor grid with `n` nodes per axis at the cell centres `lo + (i + ½)(hi − lo)/n`.
pub fn cell_centred_grid(domain: &Domain, n: usize) -> Result<Points> {
    let d = domain.dim();
    let total = n
        .checked_pow(d as u32)
        .filter(|t| *t <= 1_000_000)
        .ok_or_else(|| Error::Input("grid too large".into()))?;
    let mut data = Vec::with_capacity(total * d);
    for flat in 0..total {
        let mut rem = flat;
        let mut row = vec![0.0; d];
        for j in (0..d).rev() {
            let i = rem % n;
            rem /= n;
            let (lo, hi) = domain.bounds[j];
            row[j] = lo + (hi - lo) * (i as f64 + 0.5) / n as f64;
        }
        data.extend_from_slice(&row);
    }
    Points::new(data, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn se() -> Kernel {
        Kernel::square_exponential(1.0).unwrap()
    }

    #[test]
    fn uniform_target_on_nodes() {
        let k = Kernel::matern(2.5, 0.4).unwrap();
        let nodes = Points::from_scalars(&[0.0, 0.3, 0.5, 0.9]).unwrap();
        let target = DiscreteMeasure::uniform(nodes.clone()).unwrap();
        let rule = kq_weights(&k, &nodes, &target, 0.0).unwrap();
        for w in rule.weights.iter() {
            assert!((w - 0.25).abs() < 1e-12);
        }
        assert!(mmd(&k, &rule.as_measure(), &target).unwrap() < 1e-7);
        let r = verify_bq_kq_identity(&rule, &target).unwrap();
        assert!(r.variance.abs() < 1e-12 && r.gap < 1e-12);
        let (mean, _) = bq_posterior(&rule, &DVector::from_element(4, 3.0)).unwrap();
        assert!((mean - 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_node_rule() {
        let k = Kernel::scaled(se(), 2.0).unwrap();
        let nodes = Points::from_scalars(&[0.2]).unwrap();
        let target = DiscreteMeasure::new(Points::from_scalars(&[0.0, 1.0]).unwrap(), vec![0.5, 0.5]).unwrap();
        let rule = kq_weights(&k, &nodes, &target, 0.0).unwrap();
        let mu = 0.5 * 2.0 * ((-0.04f64).exp() + (-0.64f64).exp());
        assert!((rule.weights[0] - mu / 2.0).abs() < 1e-15);
        // σ² = ∬k − μ²/k(x1,x1); hand expansion of the 1x1 system
        let double = 0.25 * 2.0 * (2.0 + 2.0 * (-1.0f64).exp());
        let r = verify_bq_kq_identity(&rule, &target).unwrap();
        assert!((r.variance - (double - mu * mu / 2.0)).abs() < 1e-14);
        assert!(r.gap < 1e-14);
    }

    #[test]
    fn two_node_instance_matches_dense_solve() {
        let nodes = Points::from_scalars(&[0.0, 1.0]).unwrap();
        let target = DiscreteMeasure::new(Points::from_scalars(&[0.25, 0.5]).unwrap(), vec![0.6, 0.4]).unwrap();
        let rule = kq_weights(&se(), &nodes, &target, 0.0).unwrap();
        let (m, v) = bq_posterior(&rule, &DVector::from_vec(vec![1.0, -2.0])).unwrap();
        assert!((m - MEAN_2NODE).abs() < 1e-12, "{m}");
        assert!((v - VAR_2NODE).abs() < 1e-12, "{v}");
    }

    const MEAN_2NODE: f64 = -0.032_460_993_408_937_67;
    const VAR_2NODE: f64 = 0.077_957_531_393_193_95;

    #[test]
    fn zero_function_and_length_check() {
        let nodes = Points::from_scalars(&[0.0, 1.0]).unwrap();
        let target = DiscreteMeasure::uniform(Points::from_scalars(&[0.5]).unwrap()).unwrap();
        let rule = kq_weights(&se(), &nodes, &target, 0.0).unwrap();
        let (m0, v0) = bq_posterior(&rule, &DVector::zeros(2)).unwrap();
        let (_, v1) = bq_posterior(&rule, &DVector::from_vec(vec![4.0, 1.0])).unwrap();
        assert_eq!(m0, 0.0);
        assert_eq!(v0, v1);
        assert!(bq_posterior(&rule, &DVector::zeros(3)).is_err());
        let reg = kq_weights(&se(), &nodes, &target, 0.1).unwrap();
        assert!(matches!(verify_bq_kq_identity(&reg, &target), Err(Error::Precondition(_))));
    }

    #[test]
    fn fill_distance_one_dimensional() {
        let dom = Domain::unit(1).unwrap();
        let nodes = Points::from_scalars(&[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(fill_distance(&dom, &nodes, &[0.5], 1.0, 1e-4).unwrap(), 0.25);
        let h = fill_distance(&dom, &nodes, &[0.5], 0.1, 1e-4).unwrap();
        assert!(h <= 0.1 + 1e-12);
    }

    #[test]
    fn fill_distance_refinement() {
        let dom = Domain::unit(2).unwrap();
        let nodes = Points::from_rows(&[[0.1, 0.2], [0.7, 0.3], [0.4, 0.9], [0.8, 0.8]]).unwrap();
        let coarse = fill_distance(&dom, &nodes, &[0.5, 0.5], 0.4, 0.05).unwrap();
        let fine = fill_distance(&dom, &nodes, &[0.5, 0.5], 0.4, 0.005).unwrap();
        assert!(coarse <= fine + 0.05 * 2f64.sqrt());
        assert!(fill_distance(&dom, &nodes, &[0.5, 0.5], 0.4, 0.0).is_err());
    }

    #[test]
    fn contraction_needs_three_grids() {
        let k = Kernel::matern(0.5, 0.2).unwrap();
        let dom = Domain::unit(1).unwrap();
        assert!(variance_contraction_experiment(&k, &dom, &[0.37], &[8], 0.25, 1e-3).is_err());
        assert!(variance_contraction_experiment(&se(), &dom, &[0.37], &[8, 16, 32], 0.25, 1e-3).is_err());
    }

    #[test]
    fn cell_centred_grid_layout() {
        let g = cell_centred_grid(&Domain::unit(2).unwrap(), 2).unwrap();
        assert_eq!(g.as_slice(), &[0.25, 0.25, 0.25, 0.75, 0.75, 0.25, 0.75, 0.75]);
    }
}
