use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// `x ↦ W·x + b` with `W` of shape `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    weight: Matrix,
    bias: Vec<f64>,
}

impl AffineMap {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape(
                format!("bias of length {}", weight.rows()),
                format!("length {}", bias.len()),
            ));
        }
        if !weight.is_finite() || !bias.iter().all(|b| b.is_finite()) {
            return Err(Error::InvalidConfig(
                "affine parameters must be finite".into(),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            weight: Matrix::identity(n),
            bias: vec![0.0; n],
        }
    }

    /// `W ~ N(0, std²)` entrywise, `b = 0`.
    pub fn random<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("finite positive std");
        Self {
            weight: Matrix::from_fn(out_dim, in_dim, |_, _| normal.sample(rng)),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn num_params(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }

    /// Weight entries row-major, then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weight.data().to_vec();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::shape(
                format!("{} parameters", self.num_params()),
                format!("{}", params.len()),
            ));
        }
        let nw = self.weight.rows() * self.weight.cols();
        self.weight.data_mut().copy_from_slice(&params[..nw]);
        self.bias.copy_from_slice(&params[nw..]);
        Ok(())
    }

    pub fn apply_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.in_dim(), x.len())?;
        Ok(self
            .bias
            .iter()
            .enumerate()
            .map(|(i, b)| b + dot(self.weight.row(i), x))
            .collect())
    }

    /// Row-wise application: `X·Wᵀ + 1·bᵀ`.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        check_dim(self.in_dim(), x.cols())?;
        let mut y = x.matmul_t(&self.weight);
        for i in 0..y.rows() {
            for (v, b) in y.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// Parameter gradient (in `params` order) and input gradient, given
    /// `∂L/∂Y` for `Y = apply(X)`.
    pub fn backward(&self, x: &Matrix, grad_out: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        check_dim(self.in_dim(), x.cols())?;
        check_dim(self.out_dim(), grad_out.cols())?;
        let gw = grad_out.t_matmul(x);
        let mut grads = gw.into_data();
        let mut gb = vec![0.0; self.out_dim()];
        for row in grad_out.row_iter() {
            for (g, r) in gb.iter_mut().zip(row) {
                *g += r;
            }
        }
        grads.extend(gb);
        Ok((grads, grad_out * &self.weight))
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimMismatch { expected, actual });
    }
    Ok(())
}
