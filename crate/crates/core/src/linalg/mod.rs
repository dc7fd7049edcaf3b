//! Dense linear algebra kernels: matrix type, exponential, SVD, angle KDE.

mod expm;
pub mod kde;
mod matrix;
mod svd;

pub use expm::{expm, expm_frechet, expm_frechet_adjoint};
pub use kde::{column_angle_kde, column_angles, silverman_bandwidth};
pub use matrix::{dot, norm2, squared_distance, Matrix};
pub use svd::{svd, Svd};

/// Frobenius norm, `sqrt(Σ mᵢⱼ²)`.
pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.frobenius_norm()
}
