//! Matrix exponential by scaling and squaring with a diagonal [6/6] Padé
//! approximant, and its Fréchet derivative via block augmentation.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

const PADE_ORDER: usize = 6;

/// The scaled matrix satisfies `‖A / 2^s‖₁ ≤ SCALED_NORM_BOUND`.
const SCALED_NORM_BOUND: f64 = 0.5;

/// Coefficients of the [m/m] Padé approximant: `(2m-k)! m! / ((2m)! k! (m-k)!)`.
fn pade_coefficients() -> [f64; PADE_ORDER + 1] {
    let m = PADE_ORDER;
    let mut c = [0.0; PADE_ORDER + 1];
    c[0] = 1.0;
    for k in 1..=m {
        // ratio c_k / c_{k-1} = (m - k + 1) / (k (2m - k + 1))
        c[k] = c[k - 1] * (m - k + 1) as f64 / (k * (2 * m - k + 1)) as f64;
    }
    c
}

pub fn expm(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::NonSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let n = a.rows();
    let norm = a.norm_1();
    let squarings = if norm > SCALED_NORM_BOUND {
        (norm / SCALED_NORM_BOUND).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a.scale(0.5f64.powi(squarings));

    let c = pade_coefficients();
    let id = Matrix::identity(n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    // even part V and odd part U so that N = V + U, D = V - U
    let mut v = id.scale(c[0]);
    v += &a2.scale(c[2]);
    v += &a4.scale(c[4]);
    v += &a6.scale(c[6]);
    let mut odd = id.scale(c[1]);
    odd += &a2.scale(c[3]);
    odd += &a4.scale(c[5]);
    let u = &scaled * &odd;

    let numer = &v + &u;
    let denom = &v - &u;
    let mut r = denom.solve(&numer)?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

/// Directional derivative `d/dt exp(p + t·e)` at `t = 0`, read off the
/// upper-right block of `exp([[p, e], [0, p]])`.
pub fn expm_frechet(p: &Matrix, e: &Matrix) -> Result<Matrix> {
    if !p.is_square() {
        return Err(Error::NonSquare {
            rows: p.rows(),
            cols: p.cols(),
        });
    }
    if p.shape() != e.shape() {
        return Err(Error::shape(
            format!("{}x{}", p.rows(), p.cols()),
            format!("{}x{}", e.rows(), e.cols()),
        ));
    }
    let n = p.rows();
    let e_norm = e.norm_1();
    if e_norm == 0.0 {
        return Ok(Matrix::zeros(n, n));
    }
    // linear in e: rescale so the direction does not inflate the squaring count
    let c = p.norm_1().max(1.0) / e_norm;
    let mut aug = Matrix::zeros(2 * n, 2 * n);
    aug.set_block(0, 0, p);
    aug.set_block(0, n, &e.scale(c));
    aug.set_block(n, n, p);
    Ok(expm(&aug)?.block(0, n, n, n).scale(1.0 / c))
}

/// Adjoint of the Fréchet derivative: for `L = ⟨g, exp(p)⟩`,
/// `∂L/∂p = L_exp(pᵀ, g)`.
pub fn expm_frechet_adjoint(p: &Matrix, g: &Matrix) -> Result<Matrix> {
    expm_frechet(&p.transpose(), g)
}
