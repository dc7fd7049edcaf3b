use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, Matrix};
use crate::losses::NORM_FLOOR;

/// Which candidates count as positives for each anchor.
#[derive(Debug, Clone, Copy)]
pub enum Positives<'a> {
    /// Candidates sharing the anchor's label.
    Labels {
        anchors: &'a [u32],
        candidates: &'a [u32],
    },
    /// Only the row-aligned candidate (anchor `i` ↔ candidate `i`).
    Aligned,
}

#[derive(Debug, Clone)]
pub struct ContrastiveGrad {
    pub value: f64,
    pub anchors: Matrix,
    pub candidates: Matrix,
}

/// Softmax cross-entropy between cosine similarities (scaled by `1/τ`) and
/// a uniform target over positives, averaged over anchors.
pub fn loss_contrastive(
    anchors: &Matrix,
    candidates: &Matrix,
    positives: Positives<'_>,
    temperature: f64,
) -> Result<ContrastiveGrad> {
    if anchors.cols() != candidates.cols() {
        return Err(Error::DimMismatch {
            expected: anchors.cols(),
            actual: candidates.cols(),
        });
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidConfig("temperature must be positive".into()));
    }
    let na = anchors.rows();
    let nc = candidates.rows();
    match positives {
        Positives::Labels {
            anchors: la,
            candidates: lc,
        } => {
            if la.len() != na || lc.len() != nc {
                return Err(Error::shape(
                    format!("{na} anchor and {nc} candidate labels"),
                    format!("{} and {}", la.len(), lc.len()),
                ));
            }
        }
        Positives::Aligned => {
            if na != nc {
                return Err(Error::shape(format!("{na} candidates"), format!("{nc}")));
            }
        }
    }

    let (a_hat, a_norm) = normalize_rows(anchors);
    let (c_hat, c_norm) = normalize_rows(candidates);
    let inv_t = 1.0 / temperature;

    let mut value = 0.0;
    let mut ds = Matrix::zeros(na, nc);
    let mut q = vec![0.0; nc];
    let mut p = vec![0.0; nc];
    for i in 0..na {
        let ai = a_hat.row(i);
        for (j, qj) in q.iter_mut().enumerate() {
            *qj = dot(ai, c_hat.row(j)) * inv_t;
        }
        let n_pos = match positives {
            Positives::Labels {
                anchors: la,
                candidates: lc,
            } => {
                let mut n = 0usize;
                for (pj, l) in p.iter_mut().zip(lc) {
                    *pj = if *l == la[i] { 1.0 } else { 0.0 };
                    n += (*l == la[i]) as usize;
                }
                n
            }
            Positives::Aligned => {
                p.iter_mut().for_each(|v| *v = 0.0);
                p[i] = 1.0;
                1
            }
        };
        if n_pos == 0 {
            return Err(Error::NoPositive { anchor: i });
        }
        let inv_pos = 1.0 / n_pos as f64;

        let max = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for s in &q {
            z += (s - max).exp();
        }
        let log_z = max + z.ln();
        let mut row_loss = log_z;
        for (s, pj) in q.iter().zip(&p) {
            row_loss -= pj * inv_pos * s;
        }
        value += row_loss;
        let dsi = ds.row_mut(i);
        for j in 0..nc {
            let qj = (q[j] - log_z).exp();
            dsi[j] = (qj - p[j] * inv_pos) / na as f64;
        }
    }
    value /= na as f64;

    // S = Â·Ĉᵀ/τ
    let da_hat = (&ds * &c_hat).scale(inv_t);
    let dc_hat = ds.t_matmul(&a_hat).scale(inv_t);
    Ok(ContrastiveGrad {
        value,
        anchors: through_normalization(&a_hat, &a_norm, &da_hat),
        candidates: through_normalization(&c_hat, &c_norm, &dc_hat),
    })
}

fn normalize_rows(m: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let n = norm2(m.row(i));
        if n < NORM_FLOOR {
            out.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
        } else {
            out.row_mut(i).iter_mut().for_each(|v| *v /= n);
        }
        norms.push(n);
    }
    (out, norms)
}

/// Backprop through `x ↦ x/‖x‖`: `(g − x̂(x̂·g))/‖x‖`. Zero rows map to
/// zero and pass no gradient.
fn through_normalization(x_hat: &Matrix, norms: &[f64], g: &Matrix) -> Matrix {
    let mut out = g.clone();
    for (i, n) in norms.iter().enumerate() {
        if *n < NORM_FLOOR {
            out.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        let xi = x_hat.row(i);
        let proj = dot(xi, g.row(i));
        for (o, x) in out.row_mut(i).iter_mut().zip(xi) {
            *o = (*o - x * proj) / n;
        }
    }
    out
}
