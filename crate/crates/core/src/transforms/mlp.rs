use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::transforms::affine::{check_dim, AffineMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    fn apply(self, m: &mut Matrix) {
        if self == Activation::Relu {
            for v in m.data_mut() {
                *v = v.max(0.0);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpMap {
    layers: Vec<(AffineMap, Activation)>,
}

impl MlpMap {
    pub fn new(layers: Vec<(AffineMap, Activation)>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::InvalidConfig("MLP needs at least one layer".into()));
        };
        if last.1 != Activation::None {
            return Err(Error::InvalidConfig(
                "final MLP layer must be linear".into(),
            ));
        }
        for w in layers.windows(2) {
            if w[0].0.out_dim() != w[1].0.in_dim() {
                return Err(Error::shape(
                    format!("layer input {}", w[0].0.out_dim()),
                    format!("{}", w[1].0.in_dim()),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// Two layers with hidden width `max(in, out)` and a ReLU between.
    pub fn two_layer<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let hidden = in_dim.max(out_dim);
        let first = AffineMap::random(in_dim, hidden, (1.0 / in_dim as f64).sqrt(), rng);
        let second = AffineMap::random(hidden, out_dim, (1.0 / hidden as f64).sqrt(), rng);
        Self {
            layers: vec![(first, Activation::Relu), (second, Activation::None)],
        }
    }

    pub fn layers(&self) -> &[(AffineMap, Activation)] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].0.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].0.out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|(l, _)| l.num_params()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|(l, _)| l.params()).collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::shape(
                format!("{} parameters", self.num_params()),
                format!("{}", params.len()),
            ));
        }
        let mut offset = 0;
        for (layer, _) in &mut self.layers {
            let n = layer.num_params();
            layer.set_params(&params[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        check_dim(self.in_dim(), x.cols())?;
        let mut h = x.clone();
        for (layer, act) in &self.layers {
            h = layer.apply(&h)?;
            act.apply(&mut h);
        }
        Ok(h)
    }

    pub fn apply_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.apply(&m)?.into_data())
    }

    pub fn backward(&self, x: &Matrix, grad_out: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        check_dim(self.in_dim(), x.cols())?;
        check_dim(self.out_dim(), grad_out.cols())?;
        // layer inputs and pre-activations
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (layer, act) in &self.layers {
            let z = layer.apply(&h)?;
            inputs.push(h);
            h = z.clone();
            act.apply(&mut h);
            pre.push(z);
        }

        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (idx, (layer, act)) in self.layers.iter().enumerate().rev() {
            if *act == Activation::Relu {
                for (gv, zv) in g.data_mut().iter_mut().zip(pre[idx].data()) {
                    if *zv <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            let (gp, gi) = layer.backward(&inputs[idx], &g)?;
            per_layer.push(gp);
            g = gi;
        }
        per_layer.reverse();
        Ok((per_layer.concat(), g))
    }
}
