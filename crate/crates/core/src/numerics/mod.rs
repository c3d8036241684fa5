//! Dense linear algebra, special functions and seeded randomness.

pub mod gamma;
pub mod matrix;
mod qr;
pub mod rng;

pub use gamma::{half_gamma_ratio, ln_gamma};
pub use matrix::{abs_elementwise, matmul, Matrix, Vector};
pub use qr::thin_q_positive;
pub use rng::{per_sample, sample_gaussian_matrix, sample_haar_columns, sample_haar_orthogonal, Rng};
