//! Factorizations of kernel systems `K + s I`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{input, numerical, Result};

/// Largest condition number accepted for an unregularized system.
pub const MAX_CONDITION: f64 = 1e12;

const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-6;

/// Cholesky factor of a symmetric positive definite system, with the
/// diagonal jitter that was needed to obtain it.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl SpdFactor {
    /// Factorizes `matrix + shift * I`.
    ///
    /// With `shift == 0` the matrix must pass the condition check before
    /// factorization. Either way a failed factorization is retried with
    /// diagonal jitter `1e-12 * trace / n`, escalating by 10 up to
    /// `1e-6 * trace / n`.
    pub fn new(matrix: &DMatrix<f64>, shift: f64, name: &str) -> Result<Self> {
        if !matrix.is_square() {
            return input(format!("{name} is not square"));
        }
        if !(shift.is_finite() && shift >= 0.0) {
            return input(format!("diagonal shift for {name} must be finite and >= 0"));
        }
        let n = matrix.nrows();
        let mut m = matrix.clone();
        for i in 0..n {
            m[(i, i)] += shift;
        }
        if shift == 0.0 && n > 0 {
            check_condition(&m, name)?;
        }
        Self::jittered(m, name)
    }

    /// Factorizes a PSD matrix as is, falling back to escalating jitter
    /// without a condition check.
    pub fn jittered(m: DMatrix<f64>, name: &str) -> Result<Self> {
        let n = m.nrows();
        if let Some(chol) = Cholesky::new(m.clone()) {
            return Ok(Self { chol, jitter: 0.0 });
        }
        let scale = if n == 0 { 0.0 } else { m.trace() / n as f64 };
        if !(scale.is_finite() && scale > 0.0) {
            return numerical(format!("{name} has non-positive trace; cannot factorize"));
        }
        let mut rel = JITTER_START;
        while rel <= JITTER_MAX * (1.0 + 1e-9) {
            let jitter = rel * scale;
            let mut jm = m.clone();
            for i in 0..n {
                jm[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(jm) {
                log::debug!("{name}: cholesky succeeded with jitter {jitter:e}");
                return Ok(Self { chol, jitter });
            }
            rel *= 10.0;
        }
        numerical(format!(
            "Cholesky factorization of {name} failed even with jitter {:e}",
            JITTER_MAX * scale
        ))
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower-triangular factor `L` with `L Lᵀ = matrix + (shift + jitter) I`.
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `L⁻¹ b`.
    pub fn half_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut v = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        v
    }

    /// `bᵀ A⁻¹ b` for the factorized matrix `A`.
    pub fn inverse_quad_form(&self, b: &DVector<f64>) -> f64 {
        self.half_solve(b).norm_squared()
    }
}

/// Fails with a numerical error when `m` is singular or has condition
/// number above [`MAX_CONDITION`].
pub fn check_condition(m: &DMatrix<f64>, name: &str) -> Result<()> {
    let cond = condition_number(m);
    if cond.is_finite() && cond <= MAX_CONDITION {
        Ok(())
    } else {
        numerical(format!(
            "{name} is singular to working precision (condition number {cond:e} > {MAX_CONDITION:e})"
        ))
    }
}

/// Spectral condition number of a symmetric matrix; infinite when it is
/// not positive definite.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let e = SymmetricEigen::new(m.clone()).eigenvalues;
    let (lo, hi) = (e.min(), e.max());
    if lo <= 0.0 || !lo.is_finite() || !hi.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// A square root `R` with `R Rᵀ = m` for a symmetric PSD matrix, taken
/// from the eigendecomposition with negative roundoff eigenvalues set to 0.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mut r = eig.eigenvectors;
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        r.column_mut(j).scale_mut(s);
    }
    r
}

/// Symmetrizes in place by averaging with the transpose.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
