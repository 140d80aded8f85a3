//! Quadrature, special functions and periodic-Gaussian (theta) sums.

pub mod quad;
pub mod special;
pub mod theta;

pub use quad::{integrate, integrate_pieces, integrate_vec, Estimate, QuadConfig};
