//! Training objectives with analytic gradients.
//!
//! Every term returns its value together with gradients for the parameters
//! of the maps involved, in each map's `params()` order. `grad_check`
//! compares any of them against central finite differences.

mod contrastive;
mod regularizers;

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

pub use contrastive::{loss_contrastive, ContrastiveGrad, Positives};
pub use regularizers::{
    loss_lambda_heaviside, loss_lambda_sigmoid, loss_orth, sigmoid, NORM_FLOOR,
};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::transforms::Transform;

pub const DEFAULT_DELTA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Forward alignment weight.
    pub w1: f64,
    /// Backward alignment weight.
    pub w2: f64,
    /// Contrastive weight.
    pub w3: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 1.0,
            w3: 1.0,
            lambda: 1.0,
            alpha: 10.0,
            temperature: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w1", self.w1),
            ("w2", self.w2),
            ("w3", self.w3),
            ("lambda", self.lambda),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and >= 0"
                )));
            }
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidConfig("alpha must be positive".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        Ok(())
    }

    /// The seven nonempty subsets of {L_F, L_B, L_C}, each term at weight 1
    /// and the rest at 0, named like `"F+B"`. The last entry is the full set.
    pub fn ablation_subsets(&self) -> Vec<(String, LossWeights)> {
        (1u8..8)
            .map(|mask| {
                let on = |bit: u8| if mask & bit != 0 { 1.0 } else { 0.0 };
                let name: Vec<&str> = [(1, "F"), (2, "B"), (4, "C")]
                    .iter()
                    .filter(|(bit, _)| mask & bit != 0)
                    .map(|(_, n)| *n)
                    .collect();
                let weights = LossWeights {
                    w1: on(1),
                    w2: on(2),
                    w3: on(4),
                    ..*self
                };
                (name.join("+"), weights)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_f: f64,
    pub l_b: f64,
    pub l_c: f64,
    pub l_lambda: f64,
}

/// Switches for `loss_total` beyond the scalar weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TotalOptions {
    /// Add the sigmoid-gated λ regularizer on an affine backward map.
    pub lambda_regularizer: bool,
    /// Stop contrastive gradients from reaching the backward map.
    pub freeze_backward_in_contrastive: bool,
}

/// Row-aligned old/new embeddings for one optimization step.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub old: &'a Matrix,
    pub new: &'a Matrix,
    /// `None` selects the unlabeled contrastive mode.
    pub labels: Option<&'a [u32]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapGrads {
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
}

fn fit_cols(m: &Matrix, k: usize) -> Result<Cow<'_, Matrix>> {
    if m.cols() > k {
        Ok(Cow::Owned(m.truncate_cols(k)?))
    } else if m.cols() == k {
        Ok(Cow::Borrowed(m))
    } else {
        Err(Error::DimMismatch {
            expected: k,
            actual: m.cols(),
        })
    }
}

fn check_rows(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.rows() != b.rows() {
        return Err(Error::shape(
            format!("{} rows", a.rows()),
            format!("{}", b.rows()),
        ));
    }
    if a.rows() == 0 {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    Ok(())
}

/// Mean over rows of `‖y_i − t_i‖²` and `∂/∂Y`.
fn mean_sq(y: &Matrix, t: &Matrix) -> (f64, Matrix) {
    let diff = y - t;
    let n = y.rows() as f64;
    let value = diff.data().iter().map(|v| v * v).sum::<f64>() / n;
    (value, diff.scale(2.0 / n))
}

/// Mean squared error between `B(h_new)` and `h_old`, both sides truncated
/// to the map's dimensions.
pub fn loss_backward_mse(b: &Transform, h_new: &Matrix, h_old: &Matrix) -> Result<(f64, Vec<f64>)> {
    check_rows(h_new, h_old)?;
    let x = fit_cols(h_new, b.in_dim())?;
    let t = fit_cols(h_old, b.out_dim())?;
    let y = b.apply(&x)?;
    let (value, dy) = mean_sq(&y, &t);
    Ok((value, b.backward(&x, &dy)?.0))
}

/// Mean squared error between `F(h_old)` and `B(h_new)`, with gradients
/// for both maps.
pub fn loss_forward(
    f: &Transform,
    b: &Transform,
    h_old: &Matrix,
    h_new: &Matrix,
) -> Result<(f64, MapGrads)> {
    check_rows(h_old, h_new)?;
    let xb = fit_cols(h_new, b.in_dim())?;
    let yf = f.apply(h_old)?;
    let yb = b.apply(&xb)?;
    if yf.cols() != yb.cols() {
        return Err(Error::DimMismatch {
            expected: yb.cols(),
            actual: yf.cols(),
        });
    }
    let (value, dy) = mean_sq(&yf, &yb);
    Ok((
        value,
        MapGrads {
            forward: f.backward(h_old, &dy)?.0,
            backward: b.backward(&xb, &(-&dy))?.0,
        },
    ))
}

/// `L_contr(F(h_old), B(h_new)) + L_contr(F(h_old), h_old)`, the old side
/// truncated to the shared dimension. Without labels only row-aligned pairs
/// are positives.
pub fn loss_combined_contrastive(
    f: &Transform,
    b: &Transform,
    h_old: &Matrix,
    h_new: &Matrix,
    labels: Option<&[u32]>,
    temperature: f64,
    freeze_backward: bool,
) -> Result<(f64, MapGrads)> {
    let batch = Batch {
        old: h_old,
        new: h_new,
        labels,
    };
    let weights = LossWeights {
        w1: 0.0,
        w2: 0.0,
        w3: 1.0,
        temperature,
        ..LossWeights::default()
    };
    let opts = TotalOptions {
        lambda_regularizer: false,
        freeze_backward_in_contrastive: freeze_backward,
    };
    let (breakdown, grads) = loss_total(f, b, &batch, &weights, &opts)?;
    Ok((breakdown.l_c, grads))
}

/// `w1·L_F + w2·L_B + w3·L_C + L_λ`. Terms with zero weight are skipped and
/// reported as 0. `L_λ` only applies to an affine backward map with
/// `opts.lambda_regularizer` set.
pub fn loss_total(
    f: &Transform,
    b: &Transform,
    batch: &Batch<'_>,
    weights: &LossWeights,
    opts: &TotalOptions,
) -> Result<(LossBreakdown, MapGrads)> {
    weights.validate()?;
    check_rows(batch.old, batch.new)?;
    if let Some(l) = batch.labels {
        if l.len() != batch.old.rows() {
            return Err(Error::shape(
                format!("{} labels", batch.old.rows()),
                format!("{}", l.len()),
            ));
        }
    }
    let xb = fit_cols(batch.new, b.in_dim())?;
    let t = fit_cols(batch.old, b.out_dim())?;
    let yb = b.apply(&xb)?;
    let yf = f.apply(batch.old)?;
    if yf.cols() != yb.cols() {
        return Err(Error::DimMismatch {
            expected: yb.cols(),
            actual: yf.cols(),
        });
    }

    let mut out = LossBreakdown::default();
    let mut dyf = Matrix::zeros(yf.rows(), yf.cols());
    let mut dyb = Matrix::zeros(yb.rows(), yb.cols());

    if weights.w1 > 0.0 {
        let (v, d) = mean_sq(&yf, &yb);
        out.l_f = v;
        let d = d.scale(weights.w1);
        dyf += &d;
        dyb -= &d;
    }
    if weights.w2 > 0.0 {
        let (v, d) = mean_sq(&yb, &t);
        out.l_b = v;
        dyb += &d.scale(weights.w2);
    }
    if weights.w3 > 0.0 {
        let positives = match batch.labels {
            Some(l) => Positives::Labels {
                anchors: l,
                candidates: l,
            },
            None => Positives::Aligned,
        };
        let cross = loss_contrastive(&yf, &yb, positives, weights.temperature)?;
        let own = loss_contrastive(&yf, &t, positives, weights.temperature)?;
        out.l_c = cross.value + own.value;
        dyf += &(&cross.anchors + &own.anchors).scale(weights.w3);
        if !opts.freeze_backward_in_contrastive {
            dyb += &cross.candidates.scale(weights.w3);
        }
    }

    let mut grad_b = b.backward(&xb, &dyb)?.0;
    if let (true, Transform::Affine(map)) = (opts.lambda_regularizer, b) {
        let (v, dw) = loss_lambda_sigmoid(map.weight(), weights.lambda, weights.alpha);
        out.l_lambda = v;
        for (g, d) in grad_b.iter_mut().zip(dw.data()) {
            *g += d;
        }
    }
    let grad_f = f.backward(batch.old, &dyf)?.0;

    out.total = weights.w1 * out.l_f + weights.w2 * out.l_b + weights.w3 * out.l_c + out.l_lambda;
    Ok((
        out,
        MapGrads {
            forward: grad_f,
            backward: grad_b,
        },
    ))
}

/// Largest relative deviation between the analytic gradient returned by
/// `loss_fn` at `params` and central finite differences with step `delta`.
/// The denominator is `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(mut loss_fn: F, params: &[f64], delta: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss_fn(params);
    assert_eq!(analytic.len(), params.len(), "gradient length");
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        probe[i] = params[i] + delta;
        let up = loss_fn(&probe).0;
        probe[i] = params[i] - delta;
        let down = loss_fn(&probe).0;
        probe[i] = params[i];
        let numeric = (up - down) / (2.0 * delta);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::{AffineMap, OrthogonalMap};

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    fn identity(n: usize) -> Transform {
        AffineMap::identity(n).into()
    }

    #[test]
    fn backward_mse_examples() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [-1.0, 0.5]]);
        let (v, g) = loss_backward_mse(&identity(2), &x, &x).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|g| *g == 0.0));

        let (v, _) = loss_backward_mse(
            &identity(2),
            &Matrix::from_rows(&[[1.0, 0.0]]),
            &Matrix::zeros(1, 2),
        )
        .unwrap();
        assert_eq!(v, 1.0);

        let b: Transform = OrthogonalMap::new(2, vec![0.4]).unwrap().into();
        let y = Matrix::from_rows(&[[0.3, -1.0], [2.0, 0.1]]);
        let (v1, _) = loss_backward_mse(&b, &x, &y).unwrap();
        let (v3, _) = loss_backward_mse(&b, &x.scale(3.0), &y.scale(3.0)).unwrap();
        assert!((v3 - 9.0 * v1).abs() < 1e-12 * v3);
    }

    #[test]
    fn backward_mse_truncates_wider_sides() {
        let b = identity(2);
        let new = Matrix::from_rows(&[[1.0, 2.0, 9.0]]);
        let old = Matrix::from_rows(&[[1.0, 2.0, -9.0, 4.0]]);
        assert_eq!(loss_backward_mse(&b, &new, &old).unwrap().0, 0.0);
        assert!(matches!(
            loss_backward_mse(&identity(3), &Matrix::zeros(1, 2), &Matrix::zeros(1, 3)),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn orth_examples() {
        assert_eq!(loss_orth(&Matrix::identity(3)).0, 0.0);
        let (v, g) = loss_orth(&Matrix::identity(2).scale(2.0));
        assert!((v - 3.0 * SQRT2).abs() < 1e-12);
        assert!((v - 4.2426).abs() < 1e-4);
        // 2·W·E/v with W = 2I, E = 3I
        assert!((g[(0, 0)] - 12.0 / v).abs() < 1e-12);
        assert_eq!(loss_orth(&Matrix::identity(4)).1, Matrix::zeros(4, 4));
    }

    #[test]
    fn heaviside_examples() {
        let w = Matrix::identity(2).scale(2.0);
        assert_eq!(loss_lambda_heaviside(&w, 10.0), 0.0);
        assert!((loss_lambda_heaviside(&w, 1.0) - 3.0 * SQRT2).abs() < 1e-12);
        assert_eq!(loss_lambda_heaviside(&w, 0.0), loss_orth(&w).0);
    }

    #[test]
    fn sigmoid_examples() {
        let (v, g) = loss_lambda_sigmoid(&Matrix::identity(3), 0.5, 10.0);
        assert_eq!(v, 0.0);
        assert_eq!(g, Matrix::zeros(3, 3));

        let w = Matrix::identity(2).scale(2.0);
        for alpha in [0.1, 10.0, 1000.0] {
            let (v, _) = loss_lambda_sigmoid(&w, 3.0 * SQRT2, alpha);
            assert!((v - 1.5 * SQRT2).abs() < 1e-12);
            assert!((v - 2.1213).abs() < 1e-4);
        }

        // direct scalar evaluation
        let g = 3.0 * SQRT2;
        let expected = g / (1.0 + (-(10.0 * (g - 10.0))).exp());
        let (v, _) = loss_lambda_sigmoid(&w, 10.0, 10.0);
        assert!((v - expected).abs() <= 1e-12 * expected);
        assert!(v > 3.0e-25 && v < 5.0e-25);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn contrastive_examples() {
        let a = Matrix::from_rows(&[[1.0, 0.0]]);
        let c = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let pos = Positives::Labels {
            anchors: &[0],
            candidates: &[0, 1],
        };
        let v = loss_contrastive(&a, &c, pos, 1.0).unwrap().value;
        let e = std::f64::consts::E;
        assert!((v + (e / (e + 1.0)).ln()).abs() < 1e-12);
        assert!((v - 0.3133).abs() < 1e-4);

        // all same label, equal similarities
        let a = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let c = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0], [0.5, 0.5]]);
        let pos = Positives::Labels {
            anchors: &[4, 4],
            candidates: &[4, 4, 4],
        };
        let v = loss_contrastive(&a, &c, pos, 0.1).unwrap().value;
        assert!((v - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn contrastive_no_positive() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let pos = Positives::Labels {
            anchors: &[0, 7],
            candidates: &[0, 1],
        };
        assert!(matches!(
            loss_contrastive(&a, &a, pos, 0.1),
            Err(Error::NoPositive { anchor: 1 })
        ));
    }

    #[test]
    fn combined_contrastive_symmetric_case() {
        // every row identical: all similarities equal, one class
        let k = 5;
        let x = Matrix::from_fn(k, 3, |_, j| [0.2, -0.4, 1.0][j]);
        let labels = vec![1u32; k];
        let (v, _) = loss_combined_contrastive(
            &identity(3),
            &identity(3),
            &x,
            &x,
            Some(&labels),
            0.1,
            false,
        )
        .unwrap();
        assert!((v - 2.0 * (k as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn labeled_equals_unlabeled_with_singleton_classes() {
        let old = Matrix::from_rows(&[[1.0, 0.2], [-0.3, 0.9], [0.5, -0.5]]);
        let new = Matrix::from_rows(&[[0.8, 0.1], [-0.1, 1.2], [0.7, -0.2]]);
        let labels = [3u32, 1, 2];
        let b: Transform = OrthogonalMap::new(2, vec![0.3]).unwrap().into();
        let f = identity(2);
        let (lab, gl) =
            loss_combined_contrastive(&f, &b, &old, &new, Some(&labels), 0.5, false).unwrap();
        let (unl, gu) = loss_combined_contrastive(&f, &b, &old, &new, None, 0.5, false).unwrap();
        assert_eq!(lab, unl);
        assert_eq!(gl, gu);
    }

    #[test]
    fn total_is_weighted_sum() {
        let old = Matrix::from_rows(&[
            [1.0, 0.2, 0.0],
            [-0.3, 0.9, 1.0],
            [0.5, -0.5, 2.0],
            [0.1, 0.1, 0.1],
        ]);
        let new = Matrix::from_rows(&[[0.8, 0.1], [-0.1, 1.2], [0.7, -0.2], [0.0, 0.3]]);
        let labels = [0u32, 1, 0, 1];
        let f: Transform = AffineMap::new(
            Matrix::from_rows(&[[1.0, 0.1, 0.0], [0.2, 0.9, -0.1]]),
            vec![0.05, -0.02],
        )
        .unwrap()
        .into();
        let b: Transform =
            AffineMap::new(Matrix::from_rows(&[[1.5, 0.2], [0.0, 0.7]]), vec![0.0, 0.1])
                .unwrap()
                .into();
        let weights = LossWeights {
            w1: 0.7,
            w2: 1.3,
            w3: 0.4,
            lambda: 0.2,
            ..LossWeights::default()
        };
        let batch = Batch {
            old: &old,
            new: &new,
            labels: Some(&labels),
        };
        let opts = TotalOptions {
            lambda_regularizer: true,
            ..TotalOptions::default()
        };
        let (br, _) = loss_total(&f, &b, &batch, &weights, &opts).unwrap();
        let (lf, _) = loss_forward(&f, &b, &old, &new).unwrap();
        let (lb, _) = loss_backward_mse(&b, &new, &old).unwrap();
        let (lc, _) =
            loss_combined_contrastive(&f, &b, &old, &new, Some(&labels), 0.1, false).unwrap();
        let Transform::Affine(bm) = &b else {
            unreachable!()
        };
        let (ll, _) = loss_lambda_sigmoid(bm.weight(), 0.2, 10.0);
        assert_eq!((br.l_f, br.l_b, br.l_c, br.l_lambda), (lf, lb, lc, ll));
        let sum = 0.7 * lf + 1.3 * lb + 0.4 * lc + ll;
        assert!((br.total - sum).abs() <= 1e-12);
    }

    #[test]
    fn zero_weights_orthogonal_total_is_zero() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, -1.0]]);
        let weights = LossWeights {
            w1: 0.0,
            w2: 0.0,
            w3: 0.0,
            ..LossWeights::default()
        };
        let b: Transform = OrthogonalMap::new(2, vec![0.7]).unwrap().into();
        let batch = Batch {
            old: &x,
            new: &x,
            labels: None,
        };
        let opts = TotalOptions {
            lambda_regularizer: true,
            ..TotalOptions::default()
        };
        let (br, g) = loss_total(&identity(2), &b, &batch, &weights, &opts).unwrap();
        assert_eq!(br, LossBreakdown::default());
        assert!(g.backward.iter().chain(&g.forward).all(|v| *v == 0.0));
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights {
            temperature: 0.0,
            ..LossWeights::default()
        };
        assert!(bad.validate().is_err());
        let bad = LossWeights {
            w2: -1.0,
            ..LossWeights::default()
        };
        assert!(bad.validate().is_err());
        let parsed: LossWeights = serde_json::from_str(r#"{"w3": 0.0}"#).unwrap();
        assert_eq!(parsed.w1, 1.0);
        assert_eq!(parsed.w3, 0.0);
    }

    #[test]
    fn ablation_subsets_cover_all_nonempty_combinations() {
        let base = LossWeights {
            temperature: 0.5,
            ..LossWeights::default()
        };
        let subsets = base.ablation_subsets();
        let names: Vec<&str> = subsets.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["F", "B", "F+B", "C", "F+C", "B+C", "F+B+C"]);
        for (_, w) in &subsets {
            assert!(w.w1 + w.w2 + w.w3 > 0.0);
            assert_eq!(w.temperature, 0.5);
        }
        let full = subsets.last().unwrap().1;
        assert_eq!((full.w1, full.w2, full.w3), (1.0, 1.0, 1.0));
    }

    #[test]
    fn grad_check_of_identity_mse_is_zero() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [0.5, -1.0]]);
        let err = grad_check(
            |p| {
                let mut b = identity(2);
                b.set_params(p).unwrap();
                loss_backward_mse(&b, &x, &x).unwrap()
            },
            &identity(2).params(),
            DEFAULT_DELTA,
        );
        assert!(err < 1e-6, "{err}");
    }
}
