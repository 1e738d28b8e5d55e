//! HSIC, its Gaussian-process form, and Brownian distance covariance.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{input, Result};
use crate::kernels::Kernel;
use crate::linalg::psd_sqrt;
use crate::points::{unique_rows, Points};

/// Paired observations `(x_i, y_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub x: Points,
    pub y: Points,
}

impl PairedSample {
    pub fn new(x: Points, y: Points) -> Result<Self> {
        if x.len() != y.len() {
            return input(format!("{} x-rows but {} y-rows", x.len(), y.len()));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn swapped(&self) -> Self {
        Self {
            x: self.y.clone(),
            y: self.x.clone(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.len() < 2 {
            return input(format!("HSIC needs at least 2 pairs (got {})", self.len()));
        }
        Ok(())
    }
}

/// `H K H` computed by subtracting row and column means.
fn double_centre(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let nf = n as f64;
    let row: Vec<f64> = (0..n).map(|i| k.row(i).sum() / nf).collect();
    let col: Vec<f64> = (0..n).map(|j| k.column(j).sum() / nf).collect();
    let grand = row.iter().sum::<f64>() / nf;
    DMatrix::from_fn(n, n, |i, j| k[(i, j)] - row[i] - col[j] + grand)
}

/// V-statistic `trace(K H L H) / n²`.
pub fn hsic_empirical(kx: &Kernel, ky: &Kernel, sample: &PairedSample) -> Result<f64> {
    sample.check()?;
    let n = sample.len() as f64;
    let kc = double_centre(&kx.gram_sym(&sample.x)?);
    let l = ky.gram_sym(&sample.y)?;
    Ok(kc.component_mul(&l).sum() / (n * n))
}

/// `E[((1/n) f_Xᵀ H g_Y)²]` for independent `f_X ~ N(0, K)`, `g_Y ~ N(0, L)`,
/// which is `trace(H K H L) / n²`, evaluated with an explicit centring matrix.
pub fn hsic_gp_exact(kx: &Kernel, ky: &Kernel, sample: &PairedSample) -> Result<f64> {
    sample.check()?;
    let n = sample.len();
    let h = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let k = kx.gram_sym(&sample.x)?;
    let l = ky.gram_sym(&sample.y)?;
    let m = &h * k * &h * l;
    Ok(m.trace() / (n * n) as f64)
}

/// Samples of a zero-mean GP at possibly repeated points: the process is
/// drawn at the distinct points and copied, so repeated points get equal values.
struct RepeatedPointSampler {
    root: DMatrix<f64>,
    map: Vec<usize>,
    u: DVector<f64>,
}

impl RepeatedPointSampler {
    fn new(kernel: &Kernel, pts: &Points) -> Result<Self> {
        let (uniq, map) = unique_rows(pts);
        let root = psd_sqrt(&kernel.gram_sym(&uniq)?);
        let u = DVector::zeros(uniq.len());
        Ok(Self { root, map, u })
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        for v in self.u.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let f = &self.root * &self.u;
        self.map.iter().map(|&i| f[i]).collect()
    }
}

/// Empirical covariance `(1/(2n²)) Σ_{i,j} (f_i − f_j)(g_i − g_j)`, which is
/// exactly zero when either vector is constant.
fn pairwise_covariance(f: &[f64], g: &[f64]) -> f64 {
    let n = f.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..i {
            s += (f[i] - f[j]) * (g[i] - g[j]);
        }
    }
    s / (n * n) as f64
}

/// Monte-Carlo average of the squared empirical covariance of independent
/// GP draws `f ~ GP(0, kx)`, `g ~ GP(0, ky)`. Returns the estimate and its
/// standard error.
pub fn hsic_gp_monte_carlo(
    kx: &Kernel,
    ky: &Kernel,
    sample: &PairedSample,
    draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    sample.check()?;
    if draws < 2 {
        return input(format!("need at least 2 draws (got {draws})"));
    }
    let mut fs = RepeatedPointSampler::new(kx, &sample.x)?;
    let mut gs = RepeatedPointSampler::new(ky, &sample.y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..draws)
        .map(|_| {
            let f = fs.draw(&mut rng);
            let g = gs.draw(&mut rng);
            let c = pairwise_covariance(&f, &g);
            c * c
        })
        .collect();
    Ok(crate::stats::mean_and_standard_error(&values))
}

/// HSIC with Brownian distance kernels on both components.
pub fn brownian_dcov(sample: &PairedSample) -> Result<f64> {
    let k = Kernel::brownian();
    hsic_empirical(&k, &k, sample)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(x: &[f64], y: &[f64]) -> PairedSample {
        PairedSample::new(Points::from_scalars(x).unwrap(), Points::from_scalars(y).unwrap()).unwrap()
    }

    /// Double-centred distance statistic `(1/n²) Σ Â_ij B̂_ij` with explicit loops.
    fn dcov_loops(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let centre = |v: &[f64]| {
            let d: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (v[i] - v[j]).abs()).collect()).collect();
            let row: Vec<f64> = d.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
            let grand = row.iter().sum::<f64>() / n as f64;
            (0..n)
                .map(|i| (0..n).map(|j| d[i][j] - row[i] - row[j] + grand).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        };
        let (a, b) = (centre(x), centre(y));
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += a[i][j] * b[i][j];
            }
        }
        s / (n * n) as f64
    }

    #[test]
    fn constant_input_gives_zero() {
        let s = sample(&[0.3, 0.3, 0.3, 0.3], &[0.1, 0.5, -1.0, 2.0]);
        let k = Kernel::square_exponential(1.0).unwrap();
        assert!(hsic_empirical(&k, &k, &s).unwrap().abs() < 1e-16);
        assert!(hsic_gp_exact(&k, &k, &s).unwrap().abs() < 1e-15);
        assert_eq!(hsic_gp_monte_carlo(&k, &k, &s, 50, 3).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn two_pair_hand_expansion() {
        let s = sample(&[0.0, 1.0], &[0.0, 2.0]);
        let k = Kernel::square_exponential(1.0).unwrap();
        let l = Kernel::matern(0.5, 1.0).unwrap();
        let dk = 2.0 - 2.0 * (-1.0f64).exp();
        let dl = 2.0 - 2.0 * (-2.0f64).exp();
        let expected = dk * dl / 16.0;
        assert!((hsic_empirical(&k, &l, &s).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn delta_kernels_give_trace_of_centring() {
        let s = sample(&[0.0, 1.0, 2.0, 3.0, 4.0], &[5.0, 4.0, 3.0, 2.0, 1.0]);
        let d = Kernel::delta(1.0).unwrap();
        let v = hsic_gp_exact(&d, &d, &s).unwrap();
        assert!((v - 4.0 / 25.0).abs() < 1e-15);
    }

    #[test]
    fn expectation_form_matches_trace_form() {
        let x = [0.1, 0.5, 0.9, 1.4, 2.0, 2.2];
        let y = [1.0, 0.2, -0.3, 0.8, 1.5, 0.0];
        let s = sample(&x, &y);
        let k = Kernel::square_exponential(0.8).unwrap();
        let l = Kernel::matern(1.5, 0.5).unwrap();
        let n = x.len() as f64;
        let kk = |i: usize, j: usize| k.eval(&[x[i]], &[x[j]]).unwrap();
        let ll = |i: usize, j: usize| l.eval(&[y[i]], &[y[j]]).unwrap();
        let idx = 0..x.len();
        let mut t1 = 0.0;
        let mut t2 = 0.0;
        let mut t3a = 0.0;
        let mut t3b = 0.0;
        for i in idx.clone() {
            for j in idx.clone() {
                t1 += kk(i, j) * ll(i, j);
                t3a += kk(i, j);
                t3b += ll(i, j);
                for m in idx.clone() {
                    t2 += kk(i, j) * ll(i, m);
                }
            }
        }
        let expected = t1 / (n * n) - 2.0 * t2 / (n * n * n) + t3a * t3b / (n * n * n * n);
        assert!((hsic_empirical(&k, &l, &s).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn brownian_hsic_equals_distance_statistic() {
        // loop oracle: the ratio of the two statistics is 1 for the
        // coefficient-1 kernel, because H K H = −H D H
        let cases: [(&[f64], &[f64]); 3] = [
            (&[0.0, 1.0, 2.0], &[0.0, 2.0, 4.0]),
            (&[0.3, -1.2, 2.5, 0.7, 1.1], &[1.0, 0.4, -2.0, 0.9, 3.0]),
            (&[5.0, 1.0, 2.0, 2.5], &[0.0, 0.0, 1.0, -1.0]),
        ];
        for (x, y) in cases {
            let h = brownian_dcov(&sample(x, y)).unwrap();
            let d = dcov_loops(x, y);
            assert!((h / d - 1.0).abs() < 1e-8, "{h} vs {d}");
        }
        let s = sample(&[0.0, 1.0, 3.0], &[2.0, 2.0, 2.0]);
        assert!(brownian_dcov(&s).unwrap().abs() < 1e-15);
        assert!(dcov_loops(&[0.0, 1.0, 3.0], &[2.0, 2.0, 2.0]).abs() < 1e-15);
    }

    #[test]
    fn needs_two_pairs() {
        let k = Kernel::square_exponential(1.0).unwrap();
        assert!(hsic_empirical(&k, &k, &sample(&[1.0], &[1.0])).is_err());
        assert!(hsic_gp_monte_carlo(&k, &k, &sample(&[1.0, 2.0], &[1.0, 0.0]), 1, 0).is_err());
        assert!(PairedSample::new(
            Points::from_scalars(&[1.0]).unwrap(),
            Points::from_scalars(&[1.0, 2.0]).unwrap()
        )
        .is_err());
    }
}
