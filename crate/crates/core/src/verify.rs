//! Seeded randomized suites checking the Bayesian/RKHS identities.
//!
//! Every trial draws its instance from its own ChaCha stream, keyed by the
//! suite and trial index, so suites and trials are reproducible in
//! isolation and independent of execution order.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dependence::{hsic_empirical, hsic_gp_exact, hsic_gp_monte_carlo, PairedSample};
use crate::duality::{verify_noise_free_identity, verify_noisy_identity};
use crate::embeddings::{
    bayes_kmean_posterior, empirical_mean_at_sample, skme, verify_average_case, DiscreteMeasure,
};
use crate::error::{Error, Result};
use crate::gp::{condition, GpPrior};
use crate::kernels::Kernel;
use crate::krr::fit_krr;
use crate::linalg::check_condition;
use crate::points::{Dataset, Points};
use crate::quadrature::{bq_posterior, kq_weights, verify_bq_kq_identity};
use crate::report::{Case, InputDigest, Report};
use crate::spectral::nystrom_eigensystem;

/// Tolerances of the exact identities.
pub const TOL_GP_KRR: f64 = 1e-8;
pub const TOL_POSTERIOR_VARIANCE: f64 = 1e-8;
pub const TOL_MMD_EXACT: f64 = 1e-10;
pub const TOL_BQ_KQ: f64 = 1e-8;
pub const TOL_BQ_MEAN: f64 = 1e-10;
pub const TOL_HSIC_EXACT: f64 = 1e-10;
pub const TOL_SHRINKAGE: f64 = 1e-8;
/// Monte-Carlo checks pass within this many standard errors.
pub const MC_STANDARD_ERRORS: f64 = 5.0;
pub const MC_DRAWS: usize = 10_000;

const MAX_REDRAWS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    GpKrr,
    PosteriorVariance,
    MmdAverageCase,
    BqKq,
    HsicGp,
    ShrinkageBayes,
    All,
}

impl Suite {
    pub const INDIVIDUAL: [Suite; 6] = [
        Suite::GpKrr,
        Suite::PosteriorVariance,
        Suite::MmdAverageCase,
        Suite::BqKq,
        Suite::HsicGp,
        Suite::ShrinkageBayes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::GpKrr => "gp-krr",
            Suite::PosteriorVariance => "posterior-variance",
            Suite::MmdAverageCase => "mmd-average-case",
            Suite::BqKq => "bq-kq",
            Suite::HsicGp => "hsic-gp",
            Suite::ShrinkageBayes => "shrinkage-bayes",
            Suite::All => "all",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Suite::GpKrr => 1,
            Suite::PosteriorVariance => 2,
            Suite::MmdAverageCase => 3,
            Suite::BqKq => 4,
            Suite::HsicGp => 5,
            Suite::ShrinkageBayes => 6,
            Suite::All => 0,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::INDIVIDUAL
            .into_iter()
            .chain([Suite::All])
            .find(|suite| suite.name() == s)
            .ok_or_else(|| {
                Error::Input(format!(
                    "unknown suite '{s}'; expected one of gp-krr, posterior-variance, \
                     mmd-average-case, bq-kq, hsic-gp, shrinkage-bayes, all"
                ))
            })
    }
}

/// Runs `trials` random instances of `suite` (of every suite for `All`).
pub fn run_suite(suite: Suite, seed: u64, trials: usize) -> Result<Report> {
    let suites: Vec<Suite> = match suite {
        Suite::All => Suite::INDIVIDUAL.to_vec(),
        s => vec![s],
    };
    let mut cases = Vec::new();
    for s in suites {
        for t in 0..trials {
            let mut rng = trial_rng(seed, s, t);
            let id = format!("{}/{t:04}", s.name());
            cases.extend(run_trial(s, &id, &mut rng, seed ^ ((t as u64) << 8) ^ s.stream()));
        }
    }
    Ok(Report::new(suite.name(), seed, trials, cases))
}

fn trial_rng(seed: u64, suite: Suite, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((suite.stream() << 32) | trial as u64);
    rng
}

fn run_trial(suite: Suite, id: &str, rng: &mut ChaCha8Rng, mc_seed: u64) -> Vec<Case> {
    let out = match suite {
        Suite::GpKrr => gp_krr_trial(id, rng),
        Suite::PosteriorVariance => posterior_variance_trial(id, rng),
        Suite::MmdAverageCase => mmd_trial(id, rng, mc_seed),
        Suite::BqKq => bq_trial(id, rng),
        Suite::HsicGp => hsic_trial(id, rng, mc_seed),
        Suite::ShrinkageBayes => shrinkage_trial(id, rng),
        Suite::All => unreachable!("expanded by run_suite"),
    };
    out.unwrap_or_else(|e| {
        log::warn!("{id}: {e}");
        vec![Case::new(id.to_string(), String::new(), f64::NAN, f64::NAN, f64::NAN, 0.0)]
    })
}

/// Kernel families drawn by the suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    SquareExponential,
    MaternHalf,
    MaternThreeHalves,
    MaternFiveHalves,
    Polynomial,
    Brownian,
}

pub const SMOOTH_FAMILIES: [Family; 5] = [
    Family::SquareExponential,
    Family::MaternHalf,
    Family::MaternThreeHalves,
    Family::MaternFiveHalves,
    Family::Polynomial,
];

pub fn uniform_points(rng: &mut impl Rng, n: usize, d: usize) -> Points {
    let data: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
    Points::new(data, d).expect("finite uniform draws")
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    10f64.powf(rng.random_range(lo.log10()..hi.log10()))
}

/// Number of monomials of degree at most `m` in `d` variables.
pub fn polynomial_rank(m: u32, d: usize) -> usize {
    let mut r: usize = 1;
    for i in 1..=d {
        r = r * (m as usize + i) / i;
    }
    r
}

/// A random kernel of `family` for `n` points in `[0,1]^d`. With `tight`,
/// length-scales shrink with the node spacing `n^{-1/d}` so that Gram
/// matrices stay invertible without regularization.
pub fn random_kernel(rng: &mut impl Rng, family: Family, n: usize, d: usize, tight: bool) -> Kernel {
    let spacing = (n.max(1) as f64).powf(-1.0 / d as f64);
    let degree = rng.random_range(1..=3);
    let mut scale = |lo: f64, hi: f64| {
        let u = rng.random_range(lo..hi);
        if tight {
            u * spacing
        } else {
            u
        }
    };
    match family {
        Family::SquareExponential => {
            let g = if tight { scale(0.5, 1.0) } else { scale(0.2, 1.5) };
            Kernel::square_exponential(g).unwrap()
        }
        Family::MaternHalf => Kernel::matern(0.5, scale(0.5, 2.0)).unwrap(),
        Family::MaternThreeHalves => Kernel::matern(1.5, scale(0.5, 1.5)).unwrap(),
        Family::MaternFiveHalves => Kernel::matern(2.5, scale(0.5, 1.2)).unwrap(),
        Family::Polynomial => {
            let c = rng.random_range(0.5..1.5);
            Kernel::polynomial(degree, c).unwrap()
        }
        Family::Brownian => Kernel::brownian(),
    }
}

/// Kernel and distinct nodes for a system solved without regularization.
/// Polynomial kernels get fewer nodes than the dimension of their feature
/// space, where the posterior variance would vanish identically.
fn unregularized_instance(rng: &mut ChaCha8Rng, max_nodes: usize) -> Result<(Kernel, Points)> {
    let d = rng.random_range(1..=3);
    let family = pick_family(rng, &SMOOTH_FAMILIES);
    let (kernel, n) = if family == Family::Polynomial {
        let kernel = random_kernel(rng, family, 1, d, false);
        let Kernel::Polynomial { degree, .. } = kernel else {
            unreachable!()
        };
        let cap = (polynomial_rank(degree, d) - 1).min(max_nodes);
        (kernel, rng.random_range(1..=cap))
    } else {
        let n = rng.random_range(1..=max_nodes);
        (random_kernel(rng, family, n, d, true), n)
    };
    let nodes = uniform_points(rng, n, d);
    check_condition(&kernel.gram_sym(&nodes)?, "K_XX")?;
    Ok((kernel, nodes))
}

/// Retries `f` on numerical failures, which signal an ill-conditioned draw.
fn redraw<T>(rng: &mut ChaCha8Rng, mut f: impl FnMut(&mut ChaCha8Rng) -> Result<T>) -> Result<T> {
    let mut last = None;
    for _ in 0..MAX_REDRAWS {
        match f(rng) {
            Ok(v) => return Ok(v),
            Err(e @ Error::Numerical(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Numerical("no admissible instance".into())))
}

fn pick_family(rng: &mut impl Rng, families: &[Family]) -> Family {
    families[rng.random_range(0..families.len())]
}

fn smooth_target(x: &[f64], phase: f64) -> f64 {
    x.iter().enumerate().map(|(j, v)| (3.0 * v + phase * (j + 1) as f64).sin()).sum()
}

fn gp_krr_trial(id: &str, rng: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    let d = rng.random_range(1..=3);
    let n = rng.random_range(1..=40);
    let family = pick_family(rng, &SMOOTH_FAMILIES);
    let kernel = random_kernel(rng, family, n, d, false);
    let x = uniform_points(rng, n, d);
    let phase: f64 = rng.random_range(0.0..3.0);
    let y: Vec<f64> = x
        .rows()
        .map(|r| smooth_target(r, phase) + 0.1 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let lambda = log_uniform(rng, 1e-4, 1e-1);
    let queries = uniform_points(rng, 20, d);
    let data = Dataset::labelled(x.clone(), y.clone())?;

    let est = fit_krr(&kernel, &data, lambda)?;
    let post = condition(GpPrior::new(kernel.clone()), &data, n as f64 * lambda)?;
    let mut worst = (0.0, 0.0, -1.0);
    for q in queries.rows() {
        let m = post.posterior_mean(q)?;
        let f = est.predict(q)?;
        let gap = (m - f).abs();
        if gap > worst.2 {
            worst = (m, f, gap);
        }
    }
    let digest = InputDigest::new()
        .tag("gp-krr")
        .kernel(&kernel)
        .points(&x)
        .scalars(&y)
        .scalars(&[lambda])
        .points(&queries)
        .finish();
    Ok(vec![Case::new(id.into(), digest, worst.0, worst.1, worst.2, TOL_GP_KRR)])
}

fn posterior_variance_trial(id: &str, rng: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    let (kernel, nodes) = redraw(rng, |rng| unregularized_instance(rng, 30))?;
    let query = uniform_points(rng, 1, nodes.dim()).row(0).to_vec();
    let sigma2 = log_uniform(rng, 1e-4, 1.0);
    let free = verify_noise_free_identity(&kernel, &nodes, &query)?;
    let noisy = verify_noisy_identity(&kernel, &nodes, sigma2, &query)?;
    let base = InputDigest::new()
        .kernel(&kernel)
        .points(&nodes)
        .scalars(&query);
    Ok(vec![
        Case::new(
            format!("{id}/noise-free"),
            base.clone().tag("noise-free").finish(),
            free.lhs,
            free.rhs,
            free.gap,
            TOL_POSTERIOR_VARIANCE,
        ),
        Case::new(
            format!("{id}/noisy"),
            base.tag("noisy").scalars(&[sigma2]).finish(),
            noisy.lhs,
            noisy.rhs,
            noisy.gap,
            TOL_POSTERIOR_VARIANCE,
        ),
    ])
}

/// A probability measure with at most `max_atoms` uniform atoms and
/// exponential weights.
pub fn random_probability_measure(rng: &mut impl Rng, max_atoms: usize, d: usize) -> DiscreteMeasure {
    let m = rng.random_range(1..=max_atoms);
    let atoms = uniform_points(rng, m, d);
    let w: Vec<f64> = (0..m).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let total: f64 = w.iter().sum();
    DiscreteMeasure::new(atoms, w.into_iter().map(|v| v / total).collect()).unwrap()
}

fn mmd_trial(id: &str, rng: &mut ChaCha8Rng, mc_seed: u64) -> Result<Vec<Case>> {
    let d = rng.random_range(1..=3);
    let family = pick_family(rng, &SMOOTH_FAMILIES);
    let kernel = random_kernel(rng, family, 1, d, false);
    let p = random_probability_measure(rng, 20, d);
    let q = match rng.random_range(0..5) {
        0 => p.clone(),
        1 => {
            // reweighted copy of P plus fresh atoms
            let extra = random_probability_measure(rng, 5, d);
            let atoms = p.atoms.concat(&extra.atoms)?;
            let mut w: Vec<f64> = p.weights.iter().map(|v| 0.5 * v).collect();
            w.extend(extra.weights.iter().map(|v| 0.5 * v));
            DiscreteMeasure::new(atoms, w)?
        }
        _ => random_probability_measure(rng, 20, d),
    };
    let r = verify_average_case(&kernel, &p, &q, MC_DRAWS, mc_seed)?;
    let digest = InputDigest::new()
        .tag("mmd")
        .kernel(&kernel)
        .points(&p.atoms)
        .scalars(p.weights.as_slice())
        .points(&q.atoms)
        .scalars(q.weights.as_slice());
    Ok(vec![
        Case::new(
            format!("{id}/exact"),
            digest.clone().tag("exact").finish(),
            r.mmd_squared,
            r.gp_variance,
            r.gap,
            TOL_MMD_EXACT,
        ),
        Case::compare(
            format!("{id}/monte-carlo"),
            digest.tag("monte-carlo").scalars(&[MC_DRAWS as f64]).finish(),
            r.mc_estimate,
            r.gp_variance,
            MC_STANDARD_ERRORS * r.mc_se,
        ),
    ])
}

fn bq_trial(id: &str, rng: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    let (kernel, nodes) = redraw(rng, |rng| unregularized_instance(rng, 20))?;
    let d = nodes.dim();
    let target = if rng.random_range(0..5) == 0 {
        DiscreteMeasure::uniform(nodes.clone())?
    } else {
        random_probability_measure(rng, 30, d)
    };
    let rule = kq_weights(&kernel, &nodes, &target, 0.0)?;
    let ident = verify_bq_kq_identity(&rule, &target)?;
    let f = DVector::from_iterator(
        nodes.len(),
        nodes.rows().map(|r| smooth_target(r, 0.7)),
    );
    let (mean, _) = bq_posterior(&rule, &f)?;
    let direct = rule.apply(&f)?;
    let digest = InputDigest::new()
        .tag("bq-kq")
        .kernel(&kernel)
        .points(&nodes)
        .points(&target.atoms)
        .scalars(target.weights.as_slice());
    Ok(vec![
        Case::new(
            format!("{id}/variance"),
            digest.clone().tag("variance").finish(),
            ident.variance,
            ident.mmd_squared,
            ident.gap,
            TOL_BQ_KQ,
        ),
        Case::compare(
            format!("{id}/mean"),
            digest.tag("mean").scalars(f.as_slice()).finish(),
            mean,
            direct,
            TOL_BQ_MEAN,
        ),
    ])
}

/// Paired sample with `y` a noisy nonlinear function of `x`, or independent
/// of it.
pub fn random_paired_sample(rng: &mut impl Rng, n: usize, dx: usize, dy: usize) -> PairedSample {
    let x = uniform_points(rng, n, dx);
    let dependent = rng.random_range(0..4) != 0;
    let a = DMatrix::<f64>::from_fn(dy, dx, |_, _| StandardNormal.sample(rng));
    let mut data = Vec::with_capacity(n * dy);
    for r in x.rows() {
        let xv = DVector::from_row_slice(r);
        let lin: DVector<f64> = &a * xv;
        for j in 0..dy {
            let noise: f64 = StandardNormal.sample(rng);
            let v = if dependent {
                (2.0 * lin[j]).tanh() + 0.3 * noise
            } else {
                noise
            };
            data.push(v);
        }
    }
    PairedSample::new(x, Points::new(data, dy).unwrap()).unwrap()
}

const HSIC_FAMILIES: [Family; 6] = [
    Family::SquareExponential,
    Family::MaternHalf,
    Family::MaternThreeHalves,
    Family::MaternFiveHalves,
    Family::Polynomial,
    Family::Brownian,
];

fn hsic_trial(id: &str, rng: &mut ChaCha8Rng, mc_seed: u64) -> Result<Vec<Case>> {
    let n = rng.random_range(2..=50);
    let dx = rng.random_range(1..=3);
    let dy = rng.random_range(1..=3);
    let fx = pick_family(rng, &HSIC_FAMILIES);
    let kx = random_kernel(rng, fx, 1, dx, false);
    let fy = pick_family(rng, &HSIC_FAMILIES);
    let ky = random_kernel(rng, fy, 1, dy, false);
    let sample = random_paired_sample(rng, n, dx, dy);
    let emp = hsic_empirical(&kx, &ky, &sample)?;
    let exact = hsic_gp_exact(&kx, &ky, &sample)?;
    let (mc, se) = hsic_gp_monte_carlo(&kx, &ky, &sample, MC_DRAWS, mc_seed)?;
    let digest = InputDigest::new()
        .tag("hsic")
        .kernel(&kx)
        .kernel(&ky)
        .points(&sample.x)
        .points(&sample.y);
    Ok(vec![
        Case::compare(
            format!("{id}/exact"),
            digest.clone().tag("exact").finish(),
            exact,
            emp,
            TOL_HSIC_EXACT,
        ),
        Case::compare(
            format!("{id}/monte-carlo"),
            digest.tag("monte-carlo").scalars(&[MC_DRAWS as f64]).finish(),
            mc,
            exact,
            MC_STANDARD_ERRORS * se,
        ),
    ])
}

fn shrinkage_trial(id: &str, rng: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    let d = rng.random_range(1..=3);
    let n = rng.random_range(1..=30);
    let family = pick_family(rng, &SMOOTH_FAMILIES);
    let kernel = random_kernel(rng, family, n, d, false);
    let sample = uniform_points(rng, n, d);
    let lambda = log_uniform(rng, 1e-4, 1e-1);

    let est = skme(&kernel, &sample, lambda)?;
    let shrunk = est.eval_points(&sample)?;
    let gram = kernel.gram_sym(&sample)?;
    let mu_hat = empirical_mean_at_sample(&gram);
    let k_theta = nystrom_eigensystem(&kernel, &sample, None)?.power_kernel(1.0)?;
    let sigma2 = n as f64 * lambda;
    let mut worst = (0.0, 0.0, -1.0);
    for i in 0..n {
        let col = k_theta.column(i).into_owned();
        let (mean, _) = bayes_kmean_posterior(&k_theta, &mu_hat, sigma2, &col, k_theta[(i, i)])?;
        let gap = (mean - shrunk[i]).abs();
        if gap > worst.2 {
            worst = (mean, shrunk[i], gap);
        }
    }
    let digest = InputDigest::new()
        .tag("shrinkage")
        .kernel(&kernel)
        .points(&sample)
        .scalars(&[lambda])
        .finish();
    Ok(vec![Case::new(id.into(), digest, worst.0, worst.1, worst.2, TOL_SHRINKAGE)])
}
