use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;

use rkhs_gp::dependence::{hsic_empirical, hsic_gp_exact, hsic_gp_monte_carlo, PairedSample};
use rkhs_gp::embeddings::{bayes_kmean_posterior, empirical_mean_at_sample, mmd_squared, skme};
use rkhs_gp::experiments::{rate_experiment, RateConfig, RateExperimentResult, Target};
use rkhs_gp::gp::{condition, sample_prior, GpPrior};
use rkhs_gp::io::{parse_dataset_csv, parse_measure_csv, parse_points_csv};
use rkhs_gp::krr::fit_krr;
use rkhs_gp::quadrature::{bq_posterior, kq_weights};
use rkhs_gp::report::{serialize_num, serialize_nums, Num, SCHEMA_VERSION};
use rkhs_gp::spectral::nystrom_eigensystem;
use rkhs_gp::verify::{run_suite, Suite};
use rkhs_gp::{Dataset, Kernel, Points};

/// Discrepancy allowed between the KRR and GP predictors in `regress --mode both`.
const REGRESS_TOLERANCE: f64 = 1e-8;

#[derive(Parser)]
#[command(name = "rkhs-gp", version, about = "Gaussian-process and RKHS kernel computations with equivalence checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run randomized identity suites and write a JSON report.
    Verify(VerifyArgs),
    /// Kernel ridge regression and/or GP regression on a CSV dataset.
    Regress(RegressArgs),
    /// Convergence-rate experiment for kernel ridge regression.
    Rates(RatesArgs),
    /// Draw GP prior sample paths at given points.
    Sample(SampleArgs),
    /// Maximum mean discrepancy between two weighted point sets.
    Mmd(MmdArgs),
    /// HSIC between the inputs and the output column of a dataset.
    Hsic(HsicArgs),
    /// Kernel quadrature weights and the Bayesian quadrature posterior.
    Quadrature(QuadratureArgs),
    /// Shrinkage kernel mean and its posterior under power-kernel priors.
    Shrinkage(ShrinkageArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_parser = parse_suite)]
    suite: Suite,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Krr,
    Gp,
    Both,
}

#[derive(Args)]
struct RegressArgs {
    /// Training CSV with header x1,...,xd,y.
    #[arg(long)]
    data: PathBuf,
    /// Query points CSV (x1,...,xd); defaults to the training inputs.
    #[arg(long)]
    query: Option<PathBuf>,
    #[arg(long, value_parser = parse_kernel)]
    kernel: Kernel,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long, value_enum, default_value_t = Mode::Both)]
    mode: Mode,
    /// Also write the predictions as CSV.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct RatesArgs {
    #[arg(long, value_parser = parse_kernel, default_value = "matern:alpha=1.5,h=0.2")]
    kernel: Kernel,
    #[arg(long, value_parser = parse_target, default_value = "representers")]
    target: Target,
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512,1024,2048")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    replications: usize,
    /// Constant c in the schedule lambda_n = c / n.
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, value_parser = parse_kernel)]
    kernel: Kernel,
    /// Points CSV (x1,...,xd).
    #[arg(long)]
    points: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct MmdArgs {
    #[arg(long, value_parser = parse_kernel)]
    kernel: Kernel,
    /// Measure CSV (x1,...,xd,w).
    #[arg(long)]
    p: PathBuf,
    #[arg(long)]
    q: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct HsicArgs {
    /// Dataset CSV; the x columns are paired with the y column.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_kernel)]
    kernel: Kernel,
    /// Kernel on the y column; defaults to --kernel.
    #[arg(long, value_parser = parse_kernel)]
    kernel_y: Option<Kernel>,
    /// Monte-Carlo draws for the GP estimator (0 skips it).
    #[arg(long, default_value_t = 0)]
    draws: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct QuadratureArgs {
    #[arg(long, value_parser = parse_kernel)]
    kernel: Kernel,
    /// Nodes CSV; an optional y column holds integrand values.
    #[arg(long)]
    nodes: PathBuf,
    /// Target measure CSV (x1,...,xd,w).
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ShrinkageArgs {
    /// Sample CSV (x1,...,xd); a y column is ignored.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_kernel)]
    kernel: Kernel,
    #[arg(long)]
    lambda: f64,
    /// Powers θ in (0, 1] of the prior kernel.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    thetas: Vec<f64>,
    #[command(flatten)]
    common: Common,
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|e: rkhs_gp::Error| e.to_string())
}

fn parse_kernel(s: &str) -> Result<Kernel, String> {
    s.parse().map_err(|e: rkhs_gp::Error| e.to_string())
}

fn parse_target(s: &str) -> Result<Target, String> {
    s.parse().map_err(|e: rkhs_gp::Error| e.to_string())
}

enum Failure {
    /// Bad input, parse errors and numerical breakdowns.
    Usage(String),
    /// The command ran but a checked identity did not hold.
    Verification(String),
}

impl From<rkhs_gp::Error> for Failure {
    fn from(e: rkhs_gp::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn in_file<T>(path: &Path, r: rkhs_gp::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Usage(e.to_string()))?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Verify(a) => verify(a),
        Command::Regress(a) => regress(a),
        Command::Rates(a) => rates(a),
        Command::Sample(a) => sample(a),
        Command::Mmd(a) => mmd(a),
        Command::Hsic(a) => hsic(a),
        Command::Quadrature(a) => quadrature(a),
        Command::Shrinkage(a) => shrinkage(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn verify(a: VerifyArgs) -> Outcome {
    let start = Instant::now();
    let mut report = run_suite(a.suite, a.common.seed, a.trials)?;
    report.wall_time = start.elapsed().as_secs_f64();
    emit(&report, a.common.out.as_deref())?;
    let failed = report.failures().count();
    if failed > 0 {
        return Err(Failure::Verification(format!("{failed} of {} cases", report.cases.len())));
    }
    Ok(())
}

#[derive(Serialize)]
struct RegressSummary {
    schema: u32,
    command: &'static str,
    mode: &'static str,
    kernel: String,
    seed: u64,
    training_points: usize,
    dim: usize,
    lambda: Option<Num>,
    sigma2: Option<Num>,
    query_points: usize,
    #[serde(skip_serializing_if = "Option::is_none", serialize_with = "opt_nums")]
    krr: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", serialize_with = "opt_nums")]
    gp_mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", serialize_with = "opt_nums")]
    gp_variance: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_discrepancy: Option<Num>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tolerance: Option<Num>,
    #[serde(skip_serializing_if = "Option::is_none")]
    passed: Option<bool>,
}

fn opt_nums<S: serde::Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => serialize_nums(v, s),
        None => s.serialize_none(),
    }
}

/// Resolves the regularization pair under `σ² = nλ`.
fn resolve_noise(mode: Mode, n: usize, lambda: Option<f64>, sigma2: Option<f64>) -> Result<(Option<f64>, Option<f64>), Failure> {
    let nf = n as f64;
    let usage = |m: &str| Err(Failure::Usage(m.to_string()));
    match (lambda, sigma2) {
        (None, None) => usage("one of --lambda or --sigma2 is required"),
        (Some(l), Some(s)) => {
            if (s - nf * l).abs() > 1e-12 * s.abs().max(nf * l.abs()) {
                return usage("--sigma2 must equal n * --lambda when both are given");
            }
            Ok((Some(l), Some(s)))
        }
        (Some(l), None) => Ok((Some(l), Some(nf * l))),
        (None, Some(s)) => match mode {
            Mode::Gp => Ok((None, Some(s))),
            _ if n == 0 => usage("--lambda cannot be derived from --sigma2 without data"),
            _ => Ok((Some(s / nf), Some(s))),
        },
    }
}

fn regress(a: RegressArgs) -> Outcome {
    let data = in_file(&a.data, parse_dataset_csv(&read(&a.data)?))?;
    in_file(&a.data, data.outputs().map(|_| ()))?;
    let queries = match &a.query {
        Some(path) => in_file(path, parse_points_csv(&read(path)?))?,
        None => data.x.clone(),
    };
    let n = data.len();
    let (lambda, sigma2) = resolve_noise(a.mode, n, a.lambda, a.sigma2)?;

    let krr = if a.mode != Mode::Gp {
        let lambda = lambda.expect("resolved for krr");
        let est = fit_krr(&a.kernel, &data, lambda)?;
        Some(est.predict_points(&queries)?.iter().copied().collect::<Vec<f64>>())
    } else {
        None
    };
    let (gp_mean, gp_variance) = if a.mode != Mode::Krr {
        let post = condition(GpPrior::new(a.kernel.clone()), &data, sigma2.expect("resolved for gp"))?;
        let mut mean = Vec::with_capacity(queries.len());
        let mut var = Vec::with_capacity(queries.len());
        for q in queries.rows() {
            mean.push(post.posterior_mean(q)?);
            var.push(post.posterior_variance(q)?);
        }
        (Some(mean), Some(var))
    } else {
        (None, None)
    };
    let discrepancy = match (&krr, &gp_mean) {
        (Some(k), Some(m)) => Some(k.iter().zip(m).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)),
        _ => None,
    };

    if let Some(path) = &a.predictions {
        write_predictions(path, &queries, &krr, &gp_mean, &gp_variance)?;
    }
    let passed = discrepancy.map(|d| d <= REGRESS_TOLERANCE);
    let summary = RegressSummary {
        schema: SCHEMA_VERSION,
        command: "regress",
        mode: match a.mode {
            Mode::Krr => "krr",
            Mode::Gp => "gp",
            Mode::Both => "both",
        },
        kernel: a.kernel.to_string(),
        seed: a.common.seed,
        training_points: n,
        dim: data.x.dim(),
        lambda: lambda.map(Num),
        sigma2: sigma2.map(Num),
        query_points: queries.len(),
        krr,
        gp_mean,
        gp_variance,
        max_discrepancy: discrepancy.map(Num),
        tolerance: discrepancy.map(|_| Num(REGRESS_TOLERANCE)),
        passed,
    };
    emit(&summary, a.common.out.as_deref())?;
    match passed {
        Some(false) => Err(Failure::Verification(format!(
            "KRR and GP predictions differ by {:e}",
            discrepancy.unwrap_or(f64::NAN)
        ))),
        _ => Ok(()),
    }
}

fn write_predictions(
    path: &Path,
    queries: &Points,
    krr: &Option<Vec<f64>>,
    mean: &Option<Vec<f64>>,
    var: &Option<Vec<f64>>,
) -> Outcome {
    let io_err = |e: csv::Error| Failure::Usage(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    let mut header: Vec<String> = (1..=queries.dim()).map(|j| format!("x{j}")).collect();
    let columns: Vec<(&str, &Vec<f64>)> = [("krr", krr), ("gp_mean", mean), ("gp_variance", var)]
        .into_iter()
        .filter_map(|(name, v)| v.as_ref().map(|v| (name, v)))
        .collect();
    header.extend(columns.iter().map(|(name, _)| name.to_string()));
    w.write_record(&header).map_err(io_err)?;
    for (i, row) in queries.rows().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        rec.extend(columns.iter().map(|(_, v)| format!("{:.16e}", v[i])));
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct RatesOutput {
    schema: u32,
    command: &'static str,
    kernel: String,
    target: String,
    seed: u64,
    replications: usize,
    #[serde(serialize_with = "serialize_num")]
    lambda_constant: f64,
    #[serde(serialize_with = "serialize_num")]
    noise_sd: f64,
    #[serde(flatten)]
    result: RateExperimentResult,
    #[serde(serialize_with = "serialize_num")]
    wall_time: f64,
}

fn rates(a: RatesArgs) -> Outcome {
    let start = Instant::now();
    let cfg = RateConfig {
        kernel: a.kernel.clone(),
        target: a.target,
        sizes: a.sizes,
        replications: a.replications,
        lambda_constant: a.lambda,
        seed: a.common.seed,
        ..RateConfig::reference(a.common.seed)
    };
    let result = rate_experiment(&cfg)?;
    let out = RatesOutput {
        schema: SCHEMA_VERSION,
        command: "rates",
        kernel: a.kernel.to_string(),
        target: a.target.to_string(),
        seed: cfg.seed,
        replications: cfg.replications,
        lambda_constant: cfg.lambda_constant,
        noise_sd: cfg.noise_sd,
        result,
        wall_time: start.elapsed().as_secs_f64(),
    };
    emit(&out, a.common.out.as_deref())
}

#[derive(Serialize)]
struct SampleOutput {
    schema: u32,
    command: &'static str,
    kernel: String,
    seed: u64,
    count: usize,
    points: usize,
    samples: Vec<Nums>,
}

struct Nums(Vec<f64>);

impl Serialize for Nums {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        serialize_nums(&self.0, s)
    }
}

fn sample(a: SampleArgs) -> Outcome {
    let x = in_file(&a.points, parse_points_csv(&read(&a.points)?))?;
    let draws = sample_prior(&GpPrior::new(a.kernel.clone()), &x, a.count, a.common.seed)?;
    let out = SampleOutput {
        schema: SCHEMA_VERSION,
        command: "sample",
        kernel: a.kernel.to_string(),
        seed: a.common.seed,
        count: a.count,
        points: x.len(),
        samples: draws.row_iter().map(|r| Nums(r.iter().copied().collect())).collect(),
    };
    emit(&out, a.common.out.as_deref())
}

#[derive(Serialize)]
struct MmdOutput {
    schema: u32,
    command: &'static str,
    kernel: String,
    seed: u64,
    #[serde(serialize_with = "serialize_num")]
    mmd: f64,
    #[serde(serialize_with = "serialize_num")]
    mmd_squared: f64,
}

fn mmd(a: MmdArgs) -> Outcome {
    let p = in_file(&a.p, parse_measure_csv(&read(&a.p)?))?;
    let q = in_file(&a.q, parse_measure_csv(&read(&a.q)?))?;
    let m2 = mmd_squared(&a.kernel, &p, &q)?;
    let m = rkhs_gp::embeddings::mmd(&a.kernel, &p, &q)?;
    let out = MmdOutput {
        schema: SCHEMA_VERSION,
        command: "mmd",
        kernel: a.kernel.to_string(),
        seed: a.common.seed,
        mmd: m,
        mmd_squared: m2,
    };
    emit(&out, a.common.out.as_deref())
}

#[derive(Serialize)]
struct HsicOutput {
    schema: u32,
    command: &'static str,
    kernel_x: String,
    kernel_y: String,
    seed: u64,
    pairs: usize,
    #[serde(serialize_with = "serialize_num")]
    hsic: f64,
    #[serde(serialize_with = "serialize_num")]
    hsic_gp_exact: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    draws: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mc_estimate: Option<Num>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mc_standard_error: Option<Num>,
}

fn hsic(a: HsicArgs) -> Outcome {
    let data: Dataset = in_file(&a.data, parse_dataset_csv(&read(&a.data)?))?;
    let y = in_file(&a.data, data.outputs())?;
    let y = in_file(&a.data, Points::from_scalars(y.as_slice()))?;
    let sample = PairedSample::new(data.x.clone(), y)?;
    let ky = a.kernel_y.clone().unwrap_or_else(|| a.kernel.clone());
    let h = hsic_empirical(&a.kernel, &ky, &sample)?;
    let exact = hsic_gp_exact(&a.kernel, &ky, &sample)?;
    let mc = if a.draws > 0 {
        Some(hsic_gp_monte_carlo(&a.kernel, &ky, &sample, a.draws, a.common.seed)?)
    } else {
        None
    };
    let out = HsicOutput {
        schema: SCHEMA_VERSION,
        command: "hsic",
        kernel_x: a.kernel.to_string(),
        kernel_y: ky.to_string(),
        seed: a.common.seed,
        pairs: sample.len(),
        hsic: h,
        hsic_gp_exact: exact,
        draws: mc.map(|_| a.draws),
        mc_estimate: mc.map(|(m, _)| Num(m)),
        mc_standard_error: mc.map(|(_, se)| Num(se)),
    };
    emit(&out, a.common.out.as_deref())
}

#[derive(Serialize)]
struct QuadratureOutput {
    schema: u32,
    command: &'static str,
    kernel: String,
    seed: u64,
    #[serde(serialize_with = "serialize_num")]
    lambda: f64,
    #[serde(serialize_with = "serialize_nums")]
    weights: Vec<f64>,
    #[serde(serialize_with = "serialize_num")]
    bq_variance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    bq_mean: Option<Num>,
}

fn quadrature(a: QuadratureArgs) -> Outcome {
    let nodes = in_file(&a.nodes, parse_dataset_csv(&read(&a.nodes)?))?;
    let target = in_file(&a.target, parse_measure_csv(&read(&a.target)?))?;
    let rule = kq_weights(&a.kernel, &nodes.x, &target, a.lambda)?;
    let f = nodes.y.clone().unwrap_or_else(|| DVector::zeros(nodes.len()));
    let (mean, variance) = bq_posterior(&rule, &f)?;
    let out = QuadratureOutput {
        schema: SCHEMA_VERSION,
        command: "quadrature",
        kernel: a.kernel.to_string(),
        seed: a.common.seed,
        lambda: a.lambda,
        weights: rule.weights.iter().copied().collect(),
        bq_variance: variance,
        bq_mean: nodes.y.as_ref().map(|_| Num(mean)),
    };
    emit(&out, a.common.out.as_deref())
}

#[derive(Serialize)]
struct ThetaRow {
    #[serde(serialize_with = "serialize_num")]
    theta: f64,
    #[serde(serialize_with = "serialize_nums")]
    posterior_mean: Vec<f64>,
    #[serde(serialize_with = "serialize_nums")]
    posterior_variance: Vec<f64>,
    /// `Σ λ_i^{1−θ}` over the Nyström spectrum; absent at θ = 1.
    hs_diagnostic: Option<Num>,
}

#[derive(Serialize)]
struct ShrinkageOutput {
    schema: u32,
    command: &'static str,
    kernel: String,
    seed: u64,
    #[serde(serialize_with = "serialize_num")]
    lambda: f64,
    #[serde(serialize_with = "serialize_num")]
    sigma2: f64,
    sample_points: usize,
    #[serde(serialize_with = "serialize_nums")]
    empirical_mean: Vec<f64>,
    #[serde(serialize_with = "serialize_nums")]
    skme: Vec<f64>,
    sweep: Vec<ThetaRow>,
}

fn shrinkage(a: ShrinkageArgs) -> Outcome {
    let x = in_file(&a.data, parse_points_csv(&read(&a.data)?))?;
    let n = x.len();
    let est = skme(&a.kernel, &x, a.lambda)?;
    let gram = a.kernel.gram_sym(&x)?;
    let mu_hat = empirical_mean_at_sample(&gram);
    let eig = nystrom_eigensystem(&a.kernel, &x, None)?;
    let sigma2 = n as f64 * a.lambda;
    let mut sweep = Vec::with_capacity(a.thetas.len());
    for &theta in &a.thetas {
        let k_theta = eig.power_kernel(theta)?;
        let mut mean = Vec::with_capacity(n);
        let mut var = Vec::with_capacity(n);
        for i in 0..n {
            let col = k_theta.column(i).into_owned();
            let (m, v) = bayes_kmean_posterior(&k_theta, &mu_hat, sigma2, &col, k_theta[(i, i)])?;
            mean.push(m);
            var.push(v.max(0.0));
        }
        let hs = if theta < 1.0 { Some(Num(eig.hs_inclusion_diagnostic(theta, eig.len())?)) } else { None };
        sweep.push(ThetaRow { theta, posterior_mean: mean, posterior_variance: var, hs_diagnostic: hs });
    }
    let out = ShrinkageOutput {
        schema: SCHEMA_VERSION,
        command: "shrinkage",
        kernel: a.kernel.to_string(),
        seed: a.common.seed,
        lambda: a.lambda,
        sigma2,
        sample_points: n,
        empirical_mean: mu_hat.iter().copied().collect(),
        skme: est.eval_points(&x)?.iter().copied().collect(),
        sweep,
    };
    emit(&out, a.common.out.as_deref())
}
