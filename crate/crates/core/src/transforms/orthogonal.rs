use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{expm, expm_frechet_adjoint, Matrix};
use crate::transforms::affine::check_dim;

/// Strictly orthogonal map `B = exp(P)` with `P` skew-symmetric.
///
/// The free parameters are the strictly upper-triangular entries of `P`
/// in row-major order; `P[j][i] = -P[i][j]` holds by construction. The
/// realized matrix is cached and recomputed whenever parameters change.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalMap {
    n: usize,
    skew_params: Vec<f64>,
    cached: Matrix,
}

impl OrthogonalMap {
    pub fn new(n: usize, skew_params: Vec<f64>) -> Result<Self> {
        if skew_params.len() != Self::param_count(n) {
            return Err(Error::shape(
                format!("{} skew parameters for n = {n}", Self::param_count(n)),
                format!("{}", skew_params.len()),
            ));
        }
        if !skew_params.iter().all(|p| p.is_finite()) {
            return Err(Error::InvalidConfig(
                "skew parameters must be finite".into(),
            ));
        }
        let cached = expm(&skew_matrix(n, &skew_params))?;
        Ok(Self {
            n,
            skew_params,
            cached,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            skew_params: vec![0.0; Self::param_count(n)],
            cached: Matrix::identity(n),
        }
    }

    /// Skew entries drawn from `N(0, std²)`: a near-identity start.
    pub fn random<R: Rng + ?Sized>(n: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("finite positive std");
        let params = (0..Self::param_count(n))
            .map(|_| normal.sample(rng))
            .collect();
        Self::new(n, params).expect("finite parameters")
    }

    pub fn param_count(n: usize) -> usize {
        n * n.saturating_sub(1) / 2
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn skew_params(&self) -> &[f64] {
        &self.skew_params
    }

    pub fn skew(&self) -> Matrix {
        skew_matrix(self.n, &self.skew_params)
    }

    /// The realized orthogonal matrix `exp(P)`.
    pub fn matrix(&self) -> &Matrix {
        &self.cached
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.skew_params.len() {
            return Err(Error::shape(
                format!("{} parameters", self.skew_params.len()),
                format!("{}", params.len()),
            ));
        }
        self.skew_params.copy_from_slice(params);
        self.cached = expm(&self.skew())?;
        Ok(())
    }

    pub fn apply_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n, x.len())?;
        Ok((0..self.n)
            .map(|i| crate::linalg::dot(self.cached.row(i), x))
            .collect())
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        check_dim(self.n, x.cols())?;
        Ok(x.matmul_t(&self.cached))
    }

    /// Gradient with respect to the skew parameters, through the matrix
    /// exponential, plus the input gradient.
    pub fn backward(&self, x: &Matrix, grad_out: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        check_dim(self.n, x.cols())?;
        check_dim(self.n, grad_out.cols())?;
        let grad_b = grad_out.t_matmul(x);
        let grad_p = expm_frechet_adjoint(&self.skew(), &grad_b)?;
        let mut grads = Vec::with_capacity(self.skew_params.len());
        for i in 0..self.n {
            for j in i + 1..self.n {
                grads.push(grad_p[(i, j)] - grad_p[(j, i)]);
            }
        }
        Ok((grads, grad_out * &self.cached))
    }
}

fn skew_matrix(n: usize, params: &[f64]) -> Matrix {
    let mut p = Matrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            p[(i, j)] = params[k];
            p[(j, i)] = -params[k];
            k += 1;
        }
    }
    p
}
