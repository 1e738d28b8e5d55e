//! Desk-scale convergence-rate experiment for kernel ridge regression.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{input, Error, Result};
use crate::kernels::Kernel;
use crate::krr::fit_krr;
use crate::points::{Dataset, Points};
use crate::report::{serialize_num, serialize_nums};
use crate::rkhs::RkhsFunction;
use crate::stats::fit_slope;

pub const TARGET_CENTERS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const TARGET_COEFFICIENTS: [f64; 5] = [1.0, -0.8, 0.6, -1.2, 0.9];

/// Regression functions for the rate experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// `Σ c_i k(·, z_i)` with the fixed centers and coefficients above,
    /// built from the experiment's own kernel.
    Representers,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Representers => "representers",
        }
    }

    pub fn build(self, kernel: &Kernel) -> Result<RkhsFunction> {
        match self {
            Target::Representers => RkhsFunction::new(
                kernel.clone(),
                Points::from_scalars(&TARGET_CENTERS)?,
                DVector::from_row_slice(&TARGET_COEFFICIENTS),
            ),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "representers" => Ok(Target::Representers),
            _ => input(format!("unknown target '{s}'; expected 'representers'")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RateConfig {
    pub kernel: Kernel,
    pub target: Target,
    pub sizes: Vec<usize>,
    pub replications: usize,
    /// `c` in `λ_n = c / n`.
    pub lambda_constant: f64,
    pub noise_sd: f64,
    /// Midpoints used for the L2 error on `[0,1]`.
    pub grid_points: usize,
    pub seed: u64,
}

impl RateConfig {
    /// Matérn 3/2 with `h = 0.2`, sizes 64 to 2048.
    pub fn reference(seed: u64) -> Self {
        Self {
            kernel: Kernel::matern(1.5, 0.2).expect("valid reference kernel"),
            target: Target::Representers,
            sizes: vec![64, 128, 256, 512, 1024, 2048],
            replications: 4,
            lambda_constant: 0.01,
            noise_sd: 0.1,
            grid_points: 1000,
            seed,
        }
    }

    /// Smoothness `β` matched to the kernel: the Matérn order `α`, whose
    /// RKHS is a Sobolev space of order `α + 1/2` on the line.
    pub fn beta(&self) -> Result<f64> {
        match &self.kernel {
            Kernel::Matern { order, .. } => Ok(order.alpha()),
            other => Err(Error::Unsupported(format!(
                "rate experiment needs a Matérn kernel, got {other}"
            ))),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sizes.len() < 3 {
            return input(format!("need at least 3 sample sizes (got {})", self.sizes.len()));
        }
        if self.sizes[0] == 0 || self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return input("sample sizes must be positive and strictly increasing");
        }
        if self.replications == 0 {
            return input("replications must be at least 1");
        }
        if !(self.lambda_constant.is_finite() && self.lambda_constant > 0.0) {
            return input("lambda constant must be finite and > 0");
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return input("noise sd must be finite and >= 0");
        }
        if self.grid_points == 0 {
            return input("error grid needs at least one point");
        }
        self.kernel.check_dim(1)?;
        self.beta().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateExperimentResult {
    pub sample_sizes: Vec<usize>,
    /// Squared L2 error averaged over replications.
    #[serde(serialize_with = "serialize_nums")]
    pub errors: Vec<f64>,
    #[serde(serialize_with = "serialize_num")]
    pub fitted_slope: f64,
    #[serde(serialize_with = "serialize_num")]
    pub theoretical_slope: f64,
}

/// Fits KRR with `λ_n = c/n` to noisy samples of the target at each size and
/// regresses log error on log n.
pub fn rate_experiment(cfg: &RateConfig) -> Result<RateExperimentResult> {
    cfg.validate()?;
    let beta = cfg.beta()?;
    let f0 = cfg.target.build(&cfg.kernel)?;
    let m = cfg.grid_points;
    let grid = Points::from_scalars(
        &(0..m).map(|i| (i as f64 + 0.5) / m as f64).collect::<Vec<_>>(),
    )?;
    let truth = f0.eval_points(&grid)?;

    let mut errors = Vec::with_capacity(cfg.sizes.len());
    for &n in &cfg.sizes {
        let mut total = 0.0;
        for rep in 0..cfg.replications {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(((n as u64) << 16) | rep as u64);
            let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let x = Points::from_scalars(&xs)?;
            let clean = f0.eval_points(&x)?;
            let y: Vec<f64> = clean
                .iter()
                .map(|v| v + cfg.noise_sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let est = fit_krr(&cfg.kernel, &Dataset::labelled(x, y)?, cfg.lambda_constant / n as f64)?;
            let pred = est.predict_points(&grid)?;
            total += (pred - &truth).norm_squared() / m as f64;
        }
        let err = total / cfg.replications as f64;
        log::info!("n = {n}: squared L2 error {err:e}");
        errors.push(err);
    }
    let log_n: Vec<f64> = cfg.sizes.iter().map(|&n| (n as f64).ln()).collect();
    let log_e: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    Ok(RateExperimentResult {
        sample_sizes: cfg.sizes.clone(),
        errors,
        fitted_slope: fit_slope(&log_n, &log_e)?,
        theoretical_slope: -2.0 * beta / (2.0 * beta + 1.0),
    })
}
