//! Complex dense matrix primitives and special functions.
//!
//! Everything downstream works on small matrices (at most a few hundred
//! entries), so the implementations favour accuracy and determinism over
//! asymptotic speed: one-sided Jacobi for the SVD, series/continued-fraction
//! evaluation for the incomplete gamma functions, and counter-derived
//! ChaCha streams so every Monte Carlo trial is independently reproducible.

mod cmatrix;
mod random;
mod special;
mod svd;

pub use cmatrix::CMatrix;
pub use random::{sample_gaussian_matrix, stream_rng};
pub use special::{gamma_lower, gamma_upper, ln_gamma, reg_gamma_lower, reg_gamma_upper};
pub use svd::{orthonormalize, svd, SvdResult};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("non-finite entry in input matrix")]
    NonFinite,
    #[error("rank-deficient input: sigma_min/sigma_max = {ratio:.3e}")]
    RankDeficient { ratio: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}
