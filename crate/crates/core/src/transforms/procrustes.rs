use crate::error::{Error, Result};
use crate::linalg::{svd, Matrix};

/// Relative singular-value cutoff for flagging a rank-deficient
/// cross-covariance.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ProcrustesFit {
    /// Orthogonal `R` minimizing `‖source·Rᵀ − target‖_F`.
    pub rotation: Matrix,
    /// The cross-covariance was rank-deficient; directions belonging to the
    /// vanishing singular values were completed arbitrarily.
    pub rank_deficient: bool,
}

/// Closed-form orthogonal Procrustes: with `targetᵀ·source = U·S·Vᵀ`,
/// the optimum is `R = U·Vᵀ`. Rows are samples; no centering is applied.
pub fn procrustes_fit(source: &Matrix, target: &Matrix) -> Result<ProcrustesFit> {
    if source.shape() != target.shape() {
        return Err(Error::shape(
            format!("{}x{}", source.rows(), source.cols()),
            format!("{}x{}", target.rows(), target.cols()),
        ));
    }
    let cross = target.t_matmul(source);
    let f = svd(&cross)?;
    let rank_deficient = f.rank(RANK_TOL) < cross.cols();
    Ok(ProcrustesFit {
        rotation: f.u.matmul_t(&f.v),
        rank_deficient,
    })
}

/// Mean over rows of `‖source_i·Rᵀ − target_i‖²`.
pub fn alignment_mse(rotation: &Matrix, source: &Matrix, target: &Matrix) -> f64 {
    let mapped = source.matmul_t(rotation);
    let diff = &mapped - target;
    diff.data().iter().map(|v| v * v).sum::<f64>() / source.rows() as f64
}
