//! Gaussian-process regression, kernel ridge regression, kernel mean
//! embeddings, kernel and Bayesian quadrature, Mercer expansions and HSIC,
//! together with numerical checks of the identities connecting the Bayesian
//! and RKHS views of each.

pub mod dependence;
pub mod duality;
pub mod embeddings;
mod error;
pub mod experiments;
pub mod gp;
pub mod io;
pub mod kernels;
pub mod krr;
pub mod linalg;
pub mod points;
pub mod quadrature;
pub mod report;
pub mod rkhs;
pub mod spectral;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use kernels::{Kernel, MaternOrder};
pub use points::{Dataset, Points};
