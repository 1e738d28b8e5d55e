//! Row-major point sets and labelled datasets.

use nalgebra::DVector;

use crate::error::{input, Result};

/// A set of `n` points in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    data: Vec<f64>,
    dim: usize,
}

impl Points {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return input("point dimension must be at least 1");
        }
        if !data.len().is_multiple_of(dim) {
            return input(format!(
                "{} coordinates do not split into points of dimension {dim}",
                data.len()
            ));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return input(format!(
                "non-finite coordinate in point {} (value {})",
                bad / dim,
                data[bad]
            ));
        }
        Ok(Self { data, dim })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(Vec::new(), dim)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return input("cannot infer dimension from an empty row list");
        };
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return input(format!("row {i} has {} coordinates, expected {dim}", r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::new(data, dim)
    }

    /// One-dimensional points from scalars.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec(), 1)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Concatenates two point sets of equal dimension.
    pub fn concat(&self, other: &Points) -> Result<Points> {
        if self.dim != other.dim {
            return input(format!(
                "cannot concatenate points of dimension {} and {}",
                self.dim, other.dim
            ));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Points { data, dim: self.dim })
    }

    /// Points selected by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> Points {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Points { data, dim: self.dim }
    }

    /// Horizontal stacking: row `i` of the result is `(self_i, other_i)`.
    pub fn hstack(&self, other: &Points) -> Result<Points> {
        if self.len() != other.len() {
            return input(format!(
                "cannot stack {} points beside {} points",
                self.len(),
                other.len()
            ));
        }
        let dim = self.dim + other.dim;
        let mut data = Vec::with_capacity(self.len() * dim);
        for (a, b) in self.rows().zip(other.rows()) {
            data.extend_from_slice(a);
            data.extend_from_slice(b);
        }
        Ok(Points { data, dim })
    }

    /// True when some row equals `x` coordinate-for-coordinate (bitwise).
    pub fn contains_bitwise(&self, x: &[f64]) -> bool {
        self.rows().any(|r| bitwise_eq(r, x))
    }
}

/// Distinct rows (bitwise) in first-occurrence order, and for every input
/// row the index of its representative.
pub fn unique_rows(points: &Points) -> (Points, Vec<usize>) {
    let mut reps: Vec<usize> = Vec::new();
    let mut map = Vec::with_capacity(points.len());
    for (i, r) in points.rows().enumerate() {
        match reps.iter().position(|&j| bitwise_eq(points.row(j), r)) {
            Some(k) => map.push(k),
            None => {
                map.push(reps.len());
                reps.push(i);
            }
        }
    }
    (points.select(&reps), map)
}

pub(crate) fn bitwise_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(u, v)| u.to_bits() == v.to_bits())
}

/// Input locations with optional scalar outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Points,
    pub y: Option<DVector<f64>>,
}

impl Dataset {
    pub fn new(x: Points, y: Option<Vec<f64>>) -> Result<Self> {
        if let Some(y) = &y {
            if y.len() != x.len() {
                return input(format!("{} outputs for {} inputs", y.len(), x.len()));
            }
            if y.iter().any(|v| !v.is_finite()) {
                return input("non-finite output value");
            }
        }
        Ok(Self {
            x,
            y: y.map(DVector::from_vec),
        })
    }

    pub fn labelled(x: Points, y: Vec<f64>) -> Result<Self> {
        Self::new(x, Some(y))
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn outputs(&self) -> Result<&DVector<f64>> {
        self.y
            .as_ref()
            .ok_or_else(|| crate::Error::Input("dataset has no outputs".into()))
    }
}
