use crate::linalg::Matrix;

/// Norms below this are treated as zero; the gradient there is 0.
pub const NORM_FLOOR: f64 = 1e-12;

/// `‖WᵀW − I‖_F` and its gradient `2·W·(WᵀW − I)/value`.
pub fn loss_orth(w: &Matrix) -> (f64, Matrix) {
    let e = w.gram_deviation();
    let value = e.frobenius_norm();
    if value < NORM_FLOOR {
        return (value, Matrix::zeros(w.rows(), w.cols()));
    }
    (value, (w * &e).scale(2.0 / value))
}

/// Hard-gated regularizer `1{g ≥ λ}·g` with `g = ‖WWᵀ − I‖_F`. Value only:
/// the gate has no useful derivative.
pub fn loss_lambda_heaviside(w: &Matrix, lambda: f64) -> f64 {
    let g = w.outer_gram_deviation().frobenius_norm();
    if g >= lambda {
        g
    } else {
        0.0
    }
}

/// Soft-gated regularizer `σ(α(g − λ))·g` with `g = ‖WWᵀ − I‖_F`.
pub fn loss_lambda_sigmoid(w: &Matrix, lambda: f64, alpha: f64) -> (f64, Matrix) {
    let d = w.outer_gram_deviation();
    let g = d.frobenius_norm();
    let s = sigmoid(alpha * (g - lambda));
    let value = s * g;
    if g < NORM_FLOOR {
        return (value, Matrix::zeros(w.rows(), w.cols()));
    }
    let dvalue_dg = s + g * alpha * s * (1.0 - s);
    (value, (&d * w).scale(2.0 * dvalue_dg / g))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
