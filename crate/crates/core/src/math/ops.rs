//! Softmax and cross-entropy kernels.
//!
//! Everything is evaluated in `f64` with per-row max subtraction, so
//! logits of magnitude 1e4 are handled without overflow.

use super::DenseMatrix;
use crate::error::{Error, Result};

/// Tolerance on target row sums accepted by [`soft_cross_entropy`].
pub const STOCHASTIC_TOL: f64 = 1e-5;

/// `log Σ exp(scale·x)`, stable for large inputs.
pub(crate) fn log_sum_exp(row: &[f64], scale: f64) -> f64 {
    let max = row
        .iter()
        .map(|&v| v * scale)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = row.iter().map(|&v| (v * scale - max).exp()).sum();
    max + sum.ln()
}

/// Writes `softmax(scale·row)` into `out`.
pub(crate) fn softmax_into(row: &[f64], scale: f64, out: &mut [f64]) {
    let max = row
        .iter()
        .map(|&v| v * scale)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v * scale - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Row-wise softmax of `scale·m`.
pub fn row_softmax(m: &DenseMatrix, scale: f32) -> DenseMatrix {
    let cols = m.cols();
    let mut out = DenseMatrix::zeros(m.rows(), cols);
    let mut row = vec![0.0f64; cols];
    let mut buf = vec![0.0f64; cols];
    for r in 0..m.rows() {
        for (d, &v) in row.iter_mut().zip(m.row(r)) {
            *d = f64::from(v);
        }
        softmax_into(&row, f64::from(scale), &mut buf);
        for (d, &v) in out.row_mut(r).iter_mut().zip(&buf) {
            *d = v as f32;
        }
    }
    out
}

/// Per-row cross-entropy `−Σ_j t_ij · log softmax(logits_i)_j`.
///
/// Each row of `targets` must be a probability distribution.
pub fn soft_cross_entropy(logits: &DenseMatrix, targets: &DenseMatrix) -> Result<Vec<f64>> {
    if logits.shape() != targets.shape() {
        return Err(Error::shape(
            "soft_cross_entropy",
            logits.shape(),
            targets.shape(),
        ));
    }
    for (i, t) in targets.iter_rows().enumerate() {
        let sum: f64 = t.iter().map(|&v| f64::from(v)).sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL || t.iter().any(|&v| v < 0.0) {
            return Err(Error::validation(format!(
                "target row {i} is not a probability distribution (sum {sum})"
            )));
        }
    }
    Ok(cross_entropy_rows(
        &logits.to_f64(),
        &targets.to_f64(),
        logits.cols(),
    ))
}

/// Unchecked per-row cross-entropy over flat row-major buffers; targets need
/// not be normalized.
pub(crate) fn cross_entropy_rows(logits: &[f64], targets: &[f64], cols: usize) -> Vec<f64> {
    if cols == 0 {
        return Vec::new();
    }
    logits
        .chunks(cols)
        .zip(targets.chunks(cols))
        .map(|(l, t)| {
            let lse = log_sum_exp(l, 1.0);
            l.iter()
                .zip(t)
                .filter(|(_, &tv)| tv != 0.0)
                .map(|(&lv, &tv)| -tv * (lv - lse))
                .sum()
        })
        .collect()
}
