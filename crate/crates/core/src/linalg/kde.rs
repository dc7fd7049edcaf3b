//! Distribution of pairwise angles between the columns of a weight matrix.

use crate::error::{Error, Result};
use crate::linalg::matrix::{dot, norm2};
use crate::linalg::Matrix;

const ZERO_COLUMN_TOL: f64 = 1e-12;

/// Used when the angle sample has no spread (a single pair, or all equal).
pub const FALLBACK_BANDWIDTH_DEG: f64 = 1.0;

/// Angles in degrees, in `[0, 180]`, between every pair of columns.
pub fn column_angles(w: &Matrix) -> Result<Vec<f64>> {
    let cols: Vec<Vec<f64>> = (0..w.cols()).map(|j| w.column(j)).collect();
    let norms: Vec<f64> = cols.iter().map(|c| norm2(c)).collect();
    if let Some(index) = norms.iter().position(|&n| n < ZERO_COLUMN_TOL) {
        return Err(Error::ZeroColumn { index });
    }
    let mut angles = Vec::with_capacity(cols.len() * cols.len().saturating_sub(1) / 2);
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            let cos = (dot(&cols[i], &cols[j]) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            angles.push(cos.acos().to_degrees());
        }
    }
    Ok(angles)
}

/// Silverman's rule of thumb, `0.9 · min(σ, IQR/1.34) · n^(-1/5)`.
pub fn silverman_bandwidth(sample: &[f64]) -> f64 {
    let n = sample.len();
    if n < 2 {
        return FALLBACK_BANDWIDTH_DEG;
    }
    let mean = sample.iter().sum::<f64>() / n as f64;
    let var = sample.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    if h > 0.0 && h.is_finite() {
        h
    } else {
        FALLBACK_BANDWIDTH_DEG
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Gaussian KDE of column angles evaluated on `grid` (degrees).
///
/// Angles live on `[0, 180]`; kernel mass that would fall outside is reflected
/// back at both boundaries so the density integrates to one over that interval.
/// `bandwidth = None` selects Silverman's rule.
pub fn column_angle_kde(w: &Matrix, bandwidth: Option<f64>, grid: &[f64]) -> Result<Vec<f64>> {
    if w.cols() < 2 {
        return Err(Error::InvalidConfig(
            "angle KDE needs at least two columns".into(),
        ));
    }
    let angles = column_angles(w)?;
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => {
            return Err(Error::InvalidConfig(format!(
                "bandwidth must be positive, got {h}"
            )))
        }
        None => silverman_bandwidth(&angles),
    };
    Ok(kde(&angles, h, grid))
}

fn kde(sample: &[f64], h: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (sample.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let kernel = |u: f64| (-0.5 * u * u).exp();
    grid.iter()
        .map(|&x| {
            norm * sample
                .iter()
                .map(|&a| kernel((x - a) / h) + kernel((x + a) / h) + kernel((x - (360.0 - a)) / h))
                .sum::<f64>()
        })
        .collect()
}

/// Uniform grid over `[0, 180]` with the given step.
pub fn angle_grid(step: f64) -> Vec<f64> {
    let n = (180.0 / step).round() as usize;
    (0..=n).map(|i| (i as f64 * step).min(180.0)).collect()
}

/// Grid point with the highest density; ties resolve to the smallest angle.
pub fn mode(grid: &[f64], density: &[f64]) -> f64 {
    let mut best = 0;
    for (i, &d) in density.iter().enumerate() {
        if d > density[best] {
            best = i;
        }
    }
    grid[best]
}
