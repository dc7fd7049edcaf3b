//! Thin SVD by one-sided (Hestenes) Jacobi rotations.

use crate::error::{Error, Result};
use crate::linalg::matrix::{dot, norm2};
use crate::linalg::Matrix;

pub const MAX_SWEEPS: usize = 60;

/// `m = u · diag(s) · vᵀ` with `u` of shape `rows × r`, `v` of shape `cols × r`
/// and `r = min(rows, cols)`. Singular values are sorted in nonincreasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (x, s) in us.row_mut(i).iter_mut().zip(&self.s) {
                *x *= s;
            }
        }
        us.matmul_t(&self.v)
    }

    /// Number of singular values above `tol · s_max`.
    pub fn rank(&self, tol: f64) -> usize {
        let smax = self.s.first().copied().unwrap_or(0.0);
        self.s.iter().filter(|&&s| s > tol * smax).count()
    }
}

pub fn svd(m: &Matrix) -> Result<Svd> {
    if let Some((row, col)) = m.first_non_finite() {
        return Err(Error::NonFiniteValue { row, col });
    }
    if m.rows() < m.cols() {
        let t = svd(&m.transpose())?;
        return Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    let (rows, cols) = m.shape();

    // Columns of the working matrix and of V are stored as rows so that the
    // rotations touch contiguous memory.
    let mut work = m.transpose();
    let mut vt = Matrix::identity(cols);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(work.row(p), work.row(p));
                let beta = dot(work.row(q), work.row(q));
                let gamma = dot(work.row(p), work.row(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut work, p, q, c, s);
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::ConvergenceFailure { sweeps: MAX_SWEEPS });
    }

    let norms: Vec<f64> = work.row_iter().map(norm2).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

    let smax = norms[order[0]];
    let cutoff = smax * f64::EPSILON * rows as f64;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut s = Vec::with_capacity(cols);
    let mut v = Matrix::zeros(cols, cols);
    let mut deficient = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        s.push(norms[j]);
        for i in 0..cols {
            v[(i, k)] = vt[(j, i)];
        }
        if norms[j] > cutoff && norms[j] > 0.0 {
            u_cols.push(work.row(j).iter().map(|x| x / norms[j]).collect());
        } else {
            u_cols.push(vec![0.0; rows]);
            deficient.push(k);
        }
    }
    complete_basis(&mut u_cols, &deficient);

    let u = Matrix::from_fn(rows, cols, |i, k| u_cols[k][i]);
    Ok(Svd { u, s, v })
}

fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols();
    let data = m.data_mut();
    let (head, tail) = data.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (a, b) in rp.iter_mut().zip(rq.iter_mut()) {
        let x = *a;
        let y = *b;
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Replaces the listed (zero) vectors with unit vectors orthogonal to all
/// others, drawn from the standard basis by Gram-Schmidt.
fn complete_basis(vectors: &mut [Vec<f64>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let dim = vectors[0].len();
    for &slot in missing {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for e in 0..dim {
            let mut cand = vec![0.0; dim];
            cand[e] = 1.0;
            // twice for numerical orthogonality
            for _ in 0..2 {
                for (k, other) in vectors.iter().enumerate() {
                    if k == slot {
                        continue;
                    }
                    let proj = dot(&cand, other);
                    for (c, o) in cand.iter_mut().zip(other) {
                        *c -= proj * o;
                    }
                }
            }
            let n = norm2(&cand);
            if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
                best = Some((n, cand));
            }
        }
        let (n, cand) = best.expect("nonempty basis");
        vectors[slot] = cand.into_iter().map(|c| c / n).collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn orthonormality_error(m: &Matrix) -> f64 {
        m.gram_deviation().frobenius_norm()
    }

    fn relative_residual(m: &Matrix, f: &Svd) -> f64 {
        (&f.reconstruct() - m).frobenius_norm() / m.frobenius_norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn identity_reconstructs() {
        let f = svd(&Matrix::identity(4)).unwrap();
        assert!(f.s.iter().all(|&s| (s - 1.0).abs() < 1e-15));
        assert!(relative_residual(&Matrix::identity(4), &f) < 1e-15);
    }

    #[test]
    fn diagonal_values() {
        let f = svd(&Matrix::diag(&[2.0, 3.0])).unwrap();
        assert_eq!(f.s, vec![3.0, 2.0]);
    }

    #[test]
    fn random_rectangular() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (r, c) in [(4, 3), (3, 4), (10, 10), (128, 128), (50, 7)] {
            let m = Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
            let f = svd(&m).unwrap();
            assert!(relative_residual(&m, &f) < 1e-9, "{r}x{c}");
            assert!(orthonormality_error(&f.u) < 1e-9);
            assert!(orthonormality_error(&f.v) < 1e-9);
            assert!(f.s.windows(2).all(|w| w[0] >= w[1]));
            assert!(f.s.iter().all(|&s| s >= 0.0));
        }
    }

    #[test]
    fn rank_deficient_still_has_orthonormal_factors() {
        // rank 1
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [-1.0, -2.0, -3.0]]);
        let f = svd(&m).unwrap();
        assert_eq!(f.rank(1e-12), 1);
        assert!(relative_residual(&m, &f) < 1e-12);
        assert!(orthonormality_error(&f.u) < 1e-12);
        assert!(orthonormality_error(&f.v) < 1e-12);

        let z = svd(&Matrix::zeros(3, 2)).unwrap();
        assert_eq!(z.s, vec![0.0, 0.0]);
        assert!(orthonormality_error(&z.u) < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let m = Matrix::from_rows(&[[1.0, f64::NAN]]);
        assert!(matches!(svd(&m), Err(Error::NonFiniteValue { .. })));
    }
}
