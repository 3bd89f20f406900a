//! Scalar-generic dense kernels.

mod cholesky;
mod matrix;
mod svd;

pub use cholesky::{cholesky, inverse_upper_cholesky, spd_inverse};
pub use matrix::Matrix;
pub use svd::{svd, SvdFactors};
