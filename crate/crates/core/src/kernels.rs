//! Positive definite kernels and Gram matrix assembly.
//!
//! A [`Kernel`] is an immutable descriptor (family plus hyperparameters).
//! Composite kernels are built with [`Kernel::sum`], [`Kernel::product`],
//! [`Kernel::scaled`] and [`Kernel::tensor`]; the noise-augmented kernel used
//! throughout GP regression is `k + σ²δ`, i.e. `Kernel::sum(k, Kernel::delta(σ²))`.
//!
//! Kernels have a flat text form used on the command line:
//!
//! ```text
//! se:gamma=1
//! matern:alpha=2.5,h=0.5
//! poly:degree=2,c=1
//! delta:sigma2=0.1
//! brownian
//! se:gamma=1 + delta:sigma2=0.01
//! 2 * matern:alpha=0.5,h=1
//! tensor[1](se:gamma=1; brownian)
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{input, Error, Result};
use crate::points::{bitwise_eq, Points};

/// Half-integer Matérn smoothness orders with closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaternOrder {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl MaternOrder {
    pub fn alpha(self) -> f64 {
        match self {
            MaternOrder::Half => 0.5,
            MaternOrder::ThreeHalves => 1.5,
            MaternOrder::FiveHalves => 2.5,
        }
    }

    pub fn from_alpha(alpha: f64) -> Result<Self> {
        if alpha == 0.5 {
            Ok(MaternOrder::Half)
        } else if alpha == 1.5 {
            Ok(MaternOrder::ThreeHalves)
        } else if alpha == 2.5 {
            Ok(MaternOrder::FiveHalves)
        } else {
            input(format!(
                "Matérn alpha must be one of 0.5, 1.5, 2.5 (got {alpha})"
            ))
        }
    }

    /// Twice the order, as an integer (1, 3 or 5).
    fn twice(self) -> u32 {
        match self {
            MaternOrder::Half => 1,
            MaternOrder::ThreeHalves => 3,
            MaternOrder::FiveHalves => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// `exp(-|x - y|^2 / gamma^2)`.
    SquareExponential { gamma: f64 },
    /// Matérn kernel with half-integer order and length-scale `h`.
    Matern { order: MaternOrder, h: f64 },
    /// `(x·y + c)^degree`.
    Polynomial { degree: u32, c: f64 },
    /// `sigma2` when the arguments are bitwise identical, zero otherwise.
    KroneckerDelta { sigma2: f64 },
    /// `|x| + |y| - |x - y|`, the covariance of Brownian motion for `d = 1`.
    BrownianDistance,
    Sum(Box<Kernel>, Box<Kernel>),
    Product(Box<Kernel>, Box<Kernel>),
    Scaled(Box<Kernel>, f64),
    /// Tensor product on stacked inputs: `left(x[..split], y[..split]) * right(x[split..], y[split..])`.
    Tensor {
        left: Box<Kernel>,
        right: Box<Kernel>,
        split: usize,
    },
}

impl Kernel {
    pub fn square_exponential(gamma: f64) -> Result<Self> {
        let k = Kernel::SquareExponential { gamma };
        k.validate()?;
        Ok(k)
    }

    pub fn matern(alpha: f64, h: f64) -> Result<Self> {
        let k = Kernel::Matern {
            order: MaternOrder::from_alpha(alpha)?,
            h,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn polynomial(degree: u32, c: f64) -> Result<Self> {
        let k = Kernel::Polynomial { degree, c };
        k.validate()?;
        Ok(k)
    }

    pub fn delta(sigma2: f64) -> Result<Self> {
        let k = Kernel::KroneckerDelta { sigma2 };
        k.validate()?;
        Ok(k)
    }

    pub fn brownian() -> Self {
        Kernel::BrownianDistance
    }

    pub fn sum(left: Kernel, right: Kernel) -> Self {
        Kernel::Sum(Box::new(left), Box::new(right))
    }

    pub fn product(left: Kernel, right: Kernel) -> Self {
        Kernel::Product(Box::new(left), Box::new(right))
    }

    pub fn scaled(base: Kernel, factor: f64) -> Result<Self> {
        let k = Kernel::Scaled(Box::new(base), factor);
        k.validate()?;
        Ok(k)
    }

    pub fn tensor(left: Kernel, right: Kernel, split: usize) -> Result<Self> {
        let k = Kernel::Tensor {
            left: Box::new(left),
            right: Box::new(right),
            split,
        };
        k.validate()?;
        Ok(k)
    }

    /// `k + σ²δ`, the covariance of noise-contaminated observations.
    pub fn with_noise(&self, sigma2: f64) -> Result<Self> {
        Ok(Kernel::sum(self.clone(), Kernel::delta(sigma2)?))
    }

    /// Checks every hyperparameter against its admissible range.
    pub fn validate(&self) -> Result<()> {
        match self {
            Kernel::SquareExponential { gamma } => positive("gamma", *gamma),
            Kernel::Matern { h, .. } => positive("h", *h),
            Kernel::Polynomial { c, .. } => {
                if c.is_finite() && *c >= 0.0 {
                    Ok(())
                } else {
                    input(format!("polynomial offset c must be finite and >= 0 (got {c})"))
                }
            }
            Kernel::KroneckerDelta { sigma2 } => {
                if sigma2.is_finite() && *sigma2 >= 0.0 {
                    Ok(())
                } else {
                    input(format!("delta scale must be finite and >= 0 (got {sigma2})"))
                }
            }
            Kernel::BrownianDistance => Ok(()),
            Kernel::Sum(a, b) | Kernel::Product(a, b) => {
                a.validate()?;
                b.validate()
            }
            Kernel::Scaled(base, factor) => {
                positive("scale factor", *factor)?;
                base.validate()
            }
            Kernel::Tensor { left, right, split } => {
                if *split == 0 {
                    return input("tensor split must be at least 1");
                }
                left.validate()?;
                right.validate()
            }
        }
    }

    /// Smallest input dimension the kernel accepts.
    fn min_dim(&self) -> usize {
        match self {
            Kernel::Sum(a, b) | Kernel::Product(a, b) => a.min_dim().max(b.min_dim()),
            Kernel::Scaled(base, _) => base.min_dim(),
            Kernel::Tensor { right, split, .. } => split + right.min_dim(),
            _ => 1,
        }
    }

    /// Checks that points of dimension `dim` are admissible.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if dim < self.min_dim() {
            return input(format!(
                "kernel needs inputs of dimension >= {} (got {dim})",
                self.min_dim()
            ));
        }
        if let Kernel::Tensor { left, split, .. } = self {
            // left factor sees exactly `split` coordinates
            left.check_dim(*split)?;
        }
        Ok(())
    }

    /// Evaluates `k(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return input(format!(
                "dimension mismatch: {} vs {}",
                x.len(),
                y.len()
            ));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return input("non-finite kernel argument");
        }
        self.validate()?;
        self.check_dim(x.len())?;
        Ok(self.eval_unchecked(x, y))
    }

    /// Evaluation without argument validation; callers must have checked
    /// dimensions and finiteness.
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Kernel::SquareExponential { gamma } => (-sq_dist(x, y) / (gamma * gamma)).exp(),
            Kernel::Matern { order, h } => matern_closed_form(*order, sq_dist(x, y).sqrt() / h),
            Kernel::Polynomial { degree, c } => (dot(x, y) + c).powi(*degree as i32),
            Kernel::KroneckerDelta { sigma2 } => {
                if bitwise_eq(x, y) {
                    *sigma2
                } else {
                    0.0
                }
            }
            Kernel::BrownianDistance => norm(x) + norm(y) - sq_dist(x, y).sqrt(),
            Kernel::Sum(a, b) => a.eval_unchecked(x, y) + b.eval_unchecked(x, y),
            Kernel::Product(a, b) => a.eval_unchecked(x, y) * b.eval_unchecked(x, y),
            Kernel::Scaled(base, factor) => factor * base.eval_unchecked(x, y),
            Kernel::Tensor { left, right, split } => {
                let s = *split;
                left.eval_unchecked(&x[..s], &y[..s]) * right.eval_unchecked(&x[s..], &y[s..])
            }
        }
    }

    fn check_points(&self, pts: &[&Points]) -> Result<()> {
        self.validate()?;
        let dim = pts[0].dim();
        for p in pts {
            if p.dim() != dim {
                return input(format!(
                    "point sets have dimensions {} and {}",
                    dim,
                    p.dim()
                ));
            }
        }
        self.check_dim(dim)
    }

    /// Matrix `[k(a_i, b_j)]`.
    pub fn gram(&self, a: &Points, b: &Points) -> Result<DMatrix<f64>> {
        self.check_points(&[a, b])?;
        Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| {
            self.eval_unchecked(a.row(i), b.row(j))
        }))
    }

    /// Symmetric Gram matrix `K_XX`; the lower triangle mirrors the upper one exactly.
    pub fn gram_sym(&self, x: &Points) -> Result<DMatrix<f64>> {
        self.check_points(&[x])?;
        let n = x.len();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = self.eval_unchecked(x.row(i), x.row(j));
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }

    /// Column vector `k_Xx = (k(x_1, x), ..., k(x_n, x))`.
    pub fn cross(&self, nodes: &Points, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != nodes.dim() {
            return input(format!(
                "query has dimension {}, nodes have {}",
                x.len(),
                nodes.dim()
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return input("non-finite query point");
        }
        self.check_points(&[nodes])?;
        Ok(DVector::from_iterator(
            nodes.len(),
            nodes.rows().map(|r| self.eval_unchecked(r, x)),
        ))
    }

    /// Fourier transform of the stationary profile `Φ(x - y) = k(x, y)`.
    ///
    /// Square-exponential: `(γ²/2)^{d/2} exp(-γ²|ω|²/4)`, the transform under
    /// `(2π)^{-d/2} ∫ Φ(x) e^{-i xᵀω} dx`.
    ///
    /// Matérn: `C (2α/h² + 4π²|ω|²)^{-α-d/2}` with
    /// `C = 2^d π^{d/2} Γ(α+d/2) (2α)^α / (Γ(α) h^{2α})`, the transform under
    /// `∫ Φ(x) e^{-2πi xᵀω} dx` (so the density integrates to `Φ(0) = 1`).
    pub fn spectral_density(&self, omega: &[f64]) -> Result<f64> {
        if omega.is_empty() {
            return input("frequency must have dimension >= 1");
        }
        if omega.iter().any(|v| !v.is_finite()) {
            return input("non-finite frequency");
        }
        self.validate()?;
        let d = omega.len();
        let w2: f64 = omega.iter().map(|w| w * w).sum();
        match self {
            Kernel::SquareExponential { gamma } => {
                let g2 = gamma * gamma;
                Ok((g2 / 2.0).powf(d as f64 / 2.0) * (-g2 * w2 / 4.0).exp())
            }
            Kernel::Matern { order, h } => {
                let alpha = order.alpha();
                let two_alpha = order.twice();
                // Γ(α + d/2) / Γ(α) with both arguments multiples of 1/2
                let gamma_ratio =
                    gamma_halves(two_alpha + d as u32) / gamma_halves(two_alpha);
                let c = 2f64.powi(d as i32)
                    * PI.powf(d as f64 / 2.0)
                    * gamma_ratio
                    * (2.0 * alpha).powf(alpha)
                    / h.powf(2.0 * alpha);
                let base = 2.0 * alpha / (h * h) + 4.0 * PI * PI * w2;
                Ok(c * base.powf(-alpha - d as f64 / 2.0))
            }
            other => Err(Error::Unsupported(format!(
                "spectral density is only available for se and matern kernels, not {other}"
            ))),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        input(format!("{name} must be finite and > 0 (got {v})"))
    }
}

/// Matérn closed forms in the scaled distance `t = |x - y| / h`.
pub(crate) fn matern_closed_form(order: MaternOrder, t: f64) -> f64 {
    match order {
        MaternOrder::Half => (-t).exp(),
        MaternOrder::ThreeHalves => {
            let s = 3f64.sqrt() * t;
            (1.0 + s) * (-s).exp()
        }
        MaternOrder::FiveHalves => {
            let s = 5f64.sqrt() * t;
            (1.0 + s + 5.0 * t * t / 3.0) * (-s).exp()
        }
    }
}

/// `Γ(k/2)` for a positive integer `k`.
fn gamma_halves(k: u32) -> f64 {
    debug_assert!(k > 0);
    let (mut value, mut arg) = if k.is_multiple_of(2) { (1.0, 1.0) } else { (PI.sqrt(), 0.5) };
    while arg < k as f64 / 2.0 {
        value *= arg;
        arg += 1.0;
    }
    value
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::SquareExponential { gamma } => write!(f, "se:gamma={gamma}"),
            Kernel::Matern { order, h } => write!(f, "matern:alpha={},h={h}", order.alpha()),
            Kernel::Polynomial { degree, c } => write!(f, "poly:degree={degree},c={c}"),
            Kernel::KroneckerDelta { sigma2 } => write!(f, "delta:sigma2={sigma2}"),
            Kernel::BrownianDistance => write!(f, "brownian"),
            Kernel::Sum(a, b) => write!(f, "({a} + {b})"),
            Kernel::Product(a, b) => write!(f, "({a} * {b})"),
            Kernel::Scaled(base, factor) => write!(f, "({factor} * {base})"),
            Kernel::Tensor { left, right, split } => write!(f, "tensor[{split}]({left}; {right})"),
        }
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_kernel(s)
    }
}

/// Parses the flat text form; see the module docs for the grammar.
pub fn parse_kernel(s: &str) -> Result<Kernel> {
    let mut p = Parser {
        src: s.as_bytes(),
        pos: 0,
        depth: 0,
    };
    let k = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return p.fail("trailing characters");
    }
    k.validate()?;
    Ok(k)
}

const MAX_NESTING: usize = 64;

enum Operand {
    Number(f64),
    Kernel(Kernel),
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    depth: usize,
}

impl Parser<'_> {
    fn fail<T>(&self, msg: &str) -> Result<T> {
        Err(Error::Parse {
            line: 1,
            message: format!("kernel spec, column {}: {msg}", self.pos + 1),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            self.fail(&format!("expected '{}'", c as char))
        }
    }

    fn expr(&mut self) -> Result<Kernel> {
        let mut acc = self.term()?;
        while self.eat(b'+') {
            let rhs = self.term()?;
            acc = Kernel::sum(acc, rhs);
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Kernel> {
        let mut scale = 1.0;
        let mut kernel: Option<Kernel> = None;
        loop {
            match self.factor()? {
                Operand::Number(v) => scale *= v,
                Operand::Kernel(k) => {
                    kernel = Some(match kernel {
                        None => k,
                        Some(prev) => Kernel::product(prev, k),
                    })
                }
            }
            if !self.eat(b'*') {
                break;
            }
        }
        let Some(kernel) = kernel else {
            return self.fail("a product needs at least one kernel");
        };
        if scale == 1.0 {
            Ok(kernel)
        } else {
            if !(scale.is_finite() && scale > 0.0) {
                return self.fail("scale factor must be finite and > 0");
            }
            Ok(Kernel::Scaled(Box::new(kernel), scale))
        }
    }

    fn factor(&mut self) -> Result<Operand> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                self.depth += 1;
                if self.depth > MAX_NESTING {
                    return self.fail("nesting too deep");
                }
                let k = self.expr()?;
                self.expect(b')')?;
                self.depth -= 1;
                Ok(Operand::Kernel(k))
            }
            Some(c) if c.is_ascii_digit() || c == b'.' || c == b'-' => {
                Ok(Operand::Number(self.number()?))
            }
            Some(c) if c.is_ascii_alphabetic() => Ok(Operand::Kernel(self.atom()?)),
            Some(_) => self.fail("unexpected character"),
            None => self.fail("unexpected end of input"),
        }
    }

    fn ident(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric()
                || self.src[self.pos] == b'_'
                || self.src[self.pos] == b'-')
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).to_ascii_lowercase()
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        if self.pos < self.src.len() && (self.src[self.pos] == b'-' || self.src[self.pos] == b'+') {
            self.pos += 1;
        }
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            let exp_sign = (c == b'-' || c == b'+')
                && self.pos > start
                && matches!(self.src[self.pos - 1], b'e' | b'E');
            if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => {
                self.pos = start;
                self.fail("malformed number")
            }
        }
    }

    fn params(&mut self) -> Result<Vec<(String, f64)>> {
        let mut out = Vec::new();
        if !self.eat(b':') {
            return Ok(out);
        }
        loop {
            let key = self.ident();
            if key.is_empty() {
                return self.fail("expected parameter name");
            }
            self.expect(b'=')?;
            let v = self.number()?;
            if out.iter().any(|(k, _)| *k == key) {
                return self.fail("duplicate parameter");
            }
            out.push((key, v));
            if !self.eat(b',') {
                break;
            }
        }
        Ok(out)
    }

    fn atom(&mut self) -> Result<Kernel> {
        let name_pos = self.pos;
        let name = self.ident();
        if name == "tensor" {
            return self.tensor();
        }
        let params = self.params()?;
        let take = |key: &str, default: Option<f64>| -> Result<f64> {
            match params.iter().position(|(k, _)| k == key) {
                Some(i) => Ok(params[i].1),
                None => default.ok_or_else(|| Error::Parse {
                    line: 1,
                    message: format!("kernel spec: '{name}' needs parameter '{key}'"),
                }),
            }
        };
        let (kernel, allowed): (Kernel, &[&str]) = match name.as_str() {
            "se" | "rbf" | "gaussian" => (
                Kernel::SquareExponential {
                    gamma: take("gamma", None)?,
                },
                &["gamma"],
            ),
            "matern" => (
                Kernel::Matern {
                    order: MaternOrder::from_alpha(take("alpha", None)?)?,
                    h: take("h", None)?,
                },
                &["alpha", "h"],
            ),
            "poly" | "polynomial" => {
                let degree = take("degree", None)?;
                if !(degree >= 0.0 && degree.fract() == 0.0 && degree <= 64.0) {
                    return self.fail("polynomial degree must be an integer in 0..=64");
                }
                (
                    Kernel::Polynomial {
                        degree: degree as u32,
                        c: take("c", Some(0.0))?,
                    },
                    &["degree", "c"],
                )
            }
            "delta" => (
                Kernel::KroneckerDelta {
                    sigma2: take("sigma2", Some(1.0))?,
                },
                &["sigma2"],
            ),
            "brownian" => (Kernel::BrownianDistance, &[]),
            _ => {
                self.pos = name_pos;
                return self.fail(&format!("unknown kernel family '{name}'"));
            }
        };
        if let Some((k, _)) = params.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            return self.fail(&format!("unknown parameter '{k}'"));
        }
        kernel.validate()?;
        Ok(kernel)
    }

    fn tensor(&mut self) -> Result<Kernel> {
        self.expect(b'[')?;
        let split = self.number()?;
        if !(split >= 1.0 && split.fract() == 0.0 && split <= 1e6) {
            return self.fail("tensor split must be a positive integer");
        }
        self.expect(b']')?;
        self.expect(b'(')?;
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return self.fail("nesting too deep");
        }
        let left = self.expr()?;
        self.expect(b';')?;
        let right = self.expr()?;
        self.expect(b')')?;
        self.depth -= 1;
        Kernel::tensor(left, right, split as usize)
    }
}
