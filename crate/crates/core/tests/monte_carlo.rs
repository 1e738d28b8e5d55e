use nalgebra::DMatrix;

use rkhs_gp::gp::{sample_prior, GpPrior};
use rkhs_gp::spectral::nystrom_eigensystem;
use rkhs_gp::{Kernel, Points};

const SAMPLES: usize = 200_000;

fn kernels() -> Vec<Kernel> {
    vec![
        Kernel::square_exponential(0.7).unwrap(),
        Kernel::matern(0.5, 0.5).unwrap(),
        Kernel::matern(1.5, 0.4).unwrap(),
        Kernel::matern(2.5, 0.3).unwrap(),
        Kernel::polynomial(2, 1.0).unwrap(),
        Kernel::brownian(),
        Kernel::sum(Kernel::matern(0.5, 1.0).unwrap(), Kernel::delta(0.1).unwrap()),
    ]
}

fn nodes() -> Points {
    Points::from_rows(&[
        [0.1, 0.2],
        [0.4, 0.9],
        [0.5, 0.5],
        [0.8, 0.3],
        [0.95, 0.7],
        [0.3, 0.35],
    ])
    .unwrap()
}

/// Entrywise check of `(1/N) Σ f fᵀ` against `k`, with the standard error
/// of a product of two jointly Gaussian variables.
fn assert_covariance(samples: &DMatrix<f64>, k: &DMatrix<f64>, label: &str) {
    let count = samples.nrows() as f64;
    let emp = samples.transpose() * samples / count;
    for i in 0..k.nrows() {
        for j in 0..k.ncols() {
            let se = ((k[(i, i)] * k[(j, j)] + k[(i, j)] * k[(i, j)]) / count).sqrt();
            let gap = (emp[(i, j)] - k[(i, j)]).abs();
            assert!(gap <= 5.0 * se + 1e-15, "{label} ({i},{j}): {} vs {} (se {se:e})", emp[(i, j)], k[(i, j)]);
        }
    }
}

#[test]
fn prior_samples_have_kernel_covariance() {
    let x = nodes();
    for (s, k) in kernels().into_iter().enumerate() {
        let samples = sample_prior(&GpPrior::new(k.clone()), &x, SAMPLES, 100 + s as u64).unwrap();
        assert_covariance(&samples, &k.gram_sym(&x).unwrap(), &k.to_string());
    }
}

#[test]
fn prior_samples_with_mean_are_centred_on_it() {
    let x = nodes();
    let prior = GpPrior::with_mean(Kernel::matern(1.5, 0.4).unwrap(), |p| p[0] - 2.0 * p[1]);
    let samples = sample_prior(&prior, &x, SAMPLES, 9).unwrap();
    let k = prior.kernel.gram_sym(&x).unwrap();
    for (i, p) in x.rows().enumerate() {
        let m = samples.column(i).mean();
        let se = (k[(i, i)] / SAMPLES as f64).sqrt();
        assert!((m - (p[0] - 2.0 * p[1])).abs() <= 5.0 * se);
    }
}

#[test]
fn karhunen_loeve_samples_have_kernel_covariance() {
    let x = nodes();
    for (s, k) in kernels().into_iter().enumerate() {
        let eig = nystrom_eigensystem(&k, &x, None).unwrap();
        let samples = eig.kl_sample(x.len(), SAMPLES, 200 + s as u64).unwrap();
        assert_covariance(&samples, &k.gram_sym(&x).unwrap(), &k.to_string());
    }
}

#[test]
fn karhunen_loeve_truncation_error() {
    let x = nodes();
    let n = x.len();
    for (s, k) in kernels().into_iter().enumerate() {
        let eig = nystrom_eigensystem(&k, &x, None).unwrap();
        let full = eig.kl_sample(n, SAMPLES, 300 + s as u64).unwrap();
        for r in 1..n {
            let truncated = eig.kl_sample(r, SAMPLES, 300 + s as u64).unwrap();
            let diff = &full - &truncated;
            for a in 0..n {
                let expected = k.eval(x.row(a), x.row(a)).unwrap() - eig.mercer_kernel_eval(r, a, a).unwrap();
                let emp = diff.column(a).norm_squared() / SAMPLES as f64;
                let se = (2.0 * expected * expected / SAMPLES as f64).sqrt();
                assert!(
                    (emp - expected).abs() <= 5.0 * se + 1e-12,
                    "{k} r={r} node {a}: {emp:e} vs {expected:e}"
                );
            }
        }
    }
}
