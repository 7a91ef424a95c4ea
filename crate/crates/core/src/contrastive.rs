//! Similarity-smoothed bidirectional contrastive objective.
//!
//! For a batch of `B` paired embeddings `H_v` (image) and `H_x` (expression):
//!
//! ```text
//! S      = H_x H_vᵀ                       cross similarity
//! T      = softmax_row(τ · (H_x H_xᵀ + H_v H_vᵀ) / 2)
//! loss   = (Σ_i ce(S_i, T_i) + Σ_j ce(S_{·j}, T_{·j})) / 2B
//! ```
//!
//! In one-hot mode `T` is the identity (plain CLIP pairing). The target is
//! treated as a constant in the backward pass. Cross logits are not scaled
//! by the temperature.
//!
//! All arithmetic happens in `f64`; [`contrastive_loss_f64`] exposes the
//! value path directly so gradients can be checked by finite differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{cross_entropy_rows, log_sum_exp, softmax_into, DenseMatrix};

/// Which target the cross-entropy terms are aligned against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Row-softmax of averaged within-modality similarities.
    Smoothed,
    /// Identity target: each spot matches only its own pair.
    OneHot,
}

impl std::str::FromStr for ObjectiveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smoothed" => Ok(Self::Smoothed),
            "one_hot" | "one-hot" | "onehot" => Ok(Self::OneHot),
            other => Err(Error::validation(format!("unknown objective mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for ObjectiveMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Smoothed => "smoothed",
            Self::OneHot => "one_hot",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f32,
    pub mode: ObjectiveMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            mode: ObjectiveMode::Smoothed,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::validation(format!(
                "temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// The three `B×B` similarity products of a batch.
#[derive(Debug, Clone)]
pub struct SimilarityBlock {
    /// `cross[i][j] = ⟨h_x[i], h_v[j]⟩`.
    pub cross: DenseMatrix,
    pub img_internal: DenseMatrix,
    pub expr_internal: DenseMatrix,
}

fn check_pair(h_v: &DenseMatrix, h_x: &DenseMatrix) -> Result<()> {
    if h_v.shape() != h_x.shape() {
        return Err(Error::shape("contrastive", h_v.shape(), h_x.shape()));
    }
    if h_v.rows() == 0 {
        return Err(Error::validation("contrastive batch must contain at least one pair"));
    }
    Ok(())
}

pub fn similarities(h_v: &DenseMatrix, h_x: &DenseMatrix) -> Result<SimilarityBlock> {
    check_pair(h_v, h_x)?;
    Ok(SimilarityBlock {
        cross: h_x.matmul_t(h_v)?,
        img_internal: h_v.matmul_t(h_v)?,
        expr_internal: h_x.matmul_t(h_x)?,
    })
}

/// Row-stochastic target `softmax_row(τ · (S_xx + S_vv) / 2)`.
pub fn smoothed_targets(block: &SimilarityBlock, tau: f32) -> Result<DenseMatrix> {
    let (b, b2) = block.img_internal.shape();
    if b != b2 || block.expr_internal.shape() != (b, b) || block.cross.shape() != (b, b) {
        return Err(Error::shape(
            "smoothed_targets",
            block.img_internal.shape(),
            block.expr_internal.shape(),
        ));
    }
    LossConfig {
        temperature: tau,
        mode: ObjectiveMode::Smoothed,
    }
    .validate()?;
    let mean: Vec<f64> = block
        .img_internal
        .data()
        .iter()
        .zip(block.expr_internal.data())
        .map(|(&v, &x)| (f64::from(v) + f64::from(x)) / 2.0)
        .collect();
    let t = targets_from_mean(&mean, b, f64::from(tau));
    DenseMatrix::from_f64(b, b, &t)
}

fn targets_from_mean(mean: &[f64], b: usize, tau: f64) -> Vec<f64> {
    let mut t = vec![0.0; b * b];
    for (src, dst) in mean.chunks(b).zip(t.chunks_mut(b)) {
        softmax_into(src, tau, dst);
    }
    t
}

fn gram(a: &[f64], b: &[f64], n: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let ai = &a[i * dim..(i + 1) * dim];
        for j in 0..n {
            let bj = &b[j * dim..(j + 1) * dim];
            out[i * n + j] = ai.iter().zip(bj).map(|(x, y)| x * y).sum();
        }
    }
    out
}

fn transpose_sq(m: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = m[i * n + j];
        }
    }
    t
}

struct Forward {
    loss: f64,
    cross: Vec<f64>,
    target: Vec<f64>,
}

fn target_of(h_v: &[f64], h_x: &[f64], b: usize, dim: usize, cfg: &LossConfig) -> Vec<f64> {
    match cfg.mode {
        ObjectiveMode::Smoothed => {
            let svv = gram(h_v, h_v, b, dim);
            let sxx = gram(h_x, h_x, b, dim);
            let mean: Vec<f64> = svv.iter().zip(&sxx).map(|(v, x)| (v + x) / 2.0).collect();
            targets_from_mean(&mean, b, f64::from(cfg.temperature))
        }
        ObjectiveMode::OneHot => {
            let mut t = vec![0.0; b * b];
            for i in 0..b {
                t[i * b + i] = 1.0;
            }
            t
        }
    }
}

fn forward_with(h_v: &[f64], h_x: &[f64], b: usize, dim: usize, target: Vec<f64>) -> Forward {
    let cross = gram(h_x, h_v, b, dim);
    let rows: f64 = cross_entropy_rows(&cross, &target, b).iter().sum();
    let cols: f64 =
        cross_entropy_rows(&transpose_sq(&cross, b), &transpose_sq(&target, b), b).iter().sum();
    Forward {
        loss: (rows + cols) / (2 * b) as f64,
        cross,
        target,
    }
}

fn check_f64(h_v: &[f64], h_x: &[f64], batch: usize, dim: usize) -> Result<()> {
    if batch == 0 || h_v.len() != batch * dim || h_x.len() != batch * dim {
        return Err(Error::shape(
            "contrastive_loss_f64",
            (h_v.len(), batch * dim),
            (h_x.len(), batch * dim),
        ));
    }
    Ok(())
}

/// Loss value on `f64` row-major embeddings of shape `batch × dim`.
pub fn contrastive_loss_f64(
    h_v: &[f64],
    h_x: &[f64],
    batch: usize,
    dim: usize,
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate()?;
    check_f64(h_v, h_x, batch, dim)?;
    let t = target_of(h_v, h_x, batch, dim, cfg);
    Ok(forward_with(h_v, h_x, batch, dim, t).loss)
}

/// Row-major `batch × batch` target matrix for `f64` embeddings.
pub fn targets_f64(h_v: &[f64], h_x: &[f64], batch: usize, dim: usize, cfg: &LossConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_f64(h_v, h_x, batch, dim)?;
    Ok(target_of(h_v, h_x, batch, dim, cfg))
}

/// Loss with the targets held at `targets`. Targets receive no gradient in
/// training, so this is the function the analytic gradients differentiate.
pub fn loss_with_targets_f64(h_v: &[f64], h_x: &[f64], batch: usize, dim: usize, targets: &[f64]) -> Result<f64> {
    check_f64(h_v, h_x, batch, dim)?;
    if targets.len() != batch * batch {
        return Err(Error::shape("loss_with_targets_f64", (targets.len(), 1), (batch * batch, 1)));
    }
    Ok(forward_with(h_v, h_x, batch, dim, targets.to_vec()).loss)
}

/// Loss value and gradients with respect to both embedding matrices.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grad_h_v: DenseMatrix,
    pub grad_h_x: DenseMatrix,
}

pub fn contrastive_loss(h_v: &DenseMatrix, h_x: &DenseMatrix, cfg: &LossConfig) -> Result<LossOutput> {
    check_pair(h_v, h_x)?;
    cfg.validate()?;
    let (b, dim) = h_v.shape();
    let hv = h_v.to_f64();
    let hx = h_x.to_f64();
    let fwd = forward_with(&hv, &hx, b, dim, target_of(&hv, &hx, b, dim, cfg));
    if !fwd.loss.is_finite() {
        return Err(Error::Numerical(format!("contrastive loss is {}", fwd.loss)));
    }

    // dL/dS[i][j] = ((P_row − T) + (c_j · P_col − T)) / 2B, with c_j the
    // column sums of T (the transposed targets are not normalized).
    let scale = 1.0 / (2 * b) as f64;
    let mut g = vec![0.0; b * b];
    let mut p = vec![0.0; b];
    for i in 0..b {
        softmax_into(&fwd.cross[i * b..(i + 1) * b], 1.0, &mut p);
        for j in 0..b {
            g[i * b + j] = p[j] - fwd.target[i * b + j];
        }
    }
    let mut col = vec![0.0; b];
    for j in 0..b {
        let mut c = 0.0;
        for i in 0..b {
            col[i] = fwd.cross[i * b + j];
            c += fwd.target[i * b + j];
        }
        let lse = log_sum_exp(&col, 1.0);
        for i in 0..b {
            g[i * b + j] += c * (col[i] - lse).exp() - fwd.target[i * b + j];
        }
    }
    g.iter_mut().for_each(|v| *v *= scale);

    // S = H_x H_vᵀ  ⇒  dH_x = G H_v,  dH_v = Gᵀ H_x
    let mut gx = vec![0.0; b * dim];
    let mut gv = vec![0.0; b * dim];
    for i in 0..b {
        for j in 0..b {
            let gij = g[i * b + j];
            if gij == 0.0 {
                continue;
            }
            for d in 0..dim {
                gx[i * dim + d] += gij * hv[j * dim + d];
                gv[j * dim + d] += gij * hx[i * dim + d];
            }
        }
    }
    Ok(LossOutput {
        loss: fwd.loss,
        grad_h_v: DenseMatrix::from_f64(b, dim, &gv)?.ensure_finite("contrastive gradient")?,
        grad_h_x: DenseMatrix::from_f64(b, dim, &gx)?.ensure_finite("contrastive gradient")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smoothed() -> LossConfig {
        LossConfig::default()
    }

    fn one_hot() -> LossConfig {
        LossConfig {
            mode: ObjectiveMode::OneHot,
            ..LossConfig::default()
        }
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_blocks() {
        let i2 = DenseMatrix::identity(2);
        let blk = similarities(&i2, &i2).unwrap();
        assert_eq!(blk.cross, i2);
        assert_eq!(blk.img_internal, i2);
        assert_eq!(blk.expr_internal, i2);
    }

    #[test]
    fn orthonormal_rows_give_identity_cross() {
        let s = std::f32::consts::FRAC_1_SQRT_2;
        let h = DenseMatrix::from_rows(&[[s, s, 0.0], [s, -s, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let blk = similarities(&h, &h).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((blk.cross.get(i, j) - e).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cross_matches_dot_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let hv = random(&mut rng, 4, 3);
        let hx = random(&mut rng, 4, 3);
        let blk = similarities(&hv, &hx).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let cross: f64 = (0..3).map(|d| f64::from(hx.get(i, d)) * f64::from(hv.get(j, d))).sum();
                let vv: f64 = (0..3).map(|d| f64::from(hv.get(i, d)) * f64::from(hv.get(j, d))).sum();
                let xx: f64 = (0..3).map(|d| f64::from(hx.get(i, d)) * f64::from(hx.get(j, d))).sum();
                assert!((f64::from(blk.cross.get(i, j)) - cross).abs() < 1e-6);
                assert!((f64::from(blk.img_internal.get(i, j)) - vv).abs() < 1e-6);
                assert!((f64::from(blk.expr_internal.get(i, j)) - xx).abs() < 1e-6);
            }
        }
        assert!((blk.img_internal.get(1, 2) - blk.img_internal.get(2, 1)).abs() < 1e-5);
    }

    #[test]
    fn single_pair_target() {
        let h = DenseMatrix::new(1, 2, vec![3.0, -1.0]).unwrap();
        let blk = similarities(&h, &h).unwrap();
        assert_eq!(smoothed_targets(&blk, 1.0).unwrap().data(), &[1.0]);
    }

    #[test]
    fn identity_targets_hand_values() {
        let i2 = DenseMatrix::identity(2);
        let t = smoothed_targets(&similarities(&i2, &i2).unwrap(), 1.0).unwrap();
        let expect = [0.7311, 0.2689, 0.2689, 0.7311];
        for (g, e) in t.data().iter().zip(expect) {
            assert!((g - e).abs() < 1e-4);
        }
    }

    #[test]
    fn tiny_temperature_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hv = random(&mut rng, 5, 4);
        let hx = random(&mut rng, 5, 4);
        let t = smoothed_targets(&similarities(&hv, &hx).unwrap(), 1e-9).unwrap();
        for &v in t.data() {
            assert!((v - 0.2).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_temperature() {
        let i2 = DenseMatrix::identity(2);
        let blk = similarities(&i2, &i2).unwrap();
        assert!(smoothed_targets(&blk, 0.0).is_err());
        assert!(smoothed_targets(&blk, -1.0).is_err());
    }

    #[test]
    fn single_pair_loss_is_zero() {
        let hv = DenseMatrix::new(1, 3, vec![0.3, -2.0, 1.0]).unwrap();
        let hx = DenseMatrix::new(1, 3, vec![5.0, 0.1, 0.0]).unwrap();
        let out = contrastive_loss(&hv, &hx, &smoothed()).unwrap();
        assert!(out.loss.abs() < 1e-12);
        assert!(out.grad_h_v.data().iter().all(|&g| g == 0.0));
        assert!(out.grad_h_x.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn identity_embedding_losses() {
        let i2 = DenseMatrix::identity(2);
        let s = contrastive_loss(&i2, &i2, &smoothed()).unwrap().loss;
        let o = contrastive_loss(&i2, &i2, &one_hot()).unwrap().loss;
        assert!((s - 0.5823).abs() < 1e-3, "{s}");
        assert!((o - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-9, "{o}");
    }

    #[test]
    fn shape_mismatch() {
        assert!(contrastive_loss(&DenseMatrix::zeros(2, 3), &DenseMatrix::zeros(2, 4), &smoothed()).is_err());
        assert!(similarities(&DenseMatrix::zeros(3, 3), &DenseMatrix::zeros(2, 3)).is_err());
    }
}
