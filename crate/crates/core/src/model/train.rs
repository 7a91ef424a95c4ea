use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Encoder, EncoderGrads, EncoderSpec, ModelCheckpoint};
use crate::contrastive::{contrastive_loss, LossConfig, ObjectiveMode};
use crate::dataset::PairedDataset;
use crate::error::{Error, Result};
use crate::math::{AdamWConfig, AdamWState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f32,
    pub epochs: usize,
    pub temperature: f32,
    pub objective: ObjectiveMode,
    #[serde(with = "super::seed_string")]
    pub seed: u64,
    pub weight_decay: f32,
    /// Hidden widths shared by both encoders.
    pub hidden_dims: Vec<usize>,
    /// Joint embedding dimension.
    pub embed_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            learning_rate: 1e-3,
            epochs: 150,
            temperature: 1.0,
            objective: ObjectiveMode::Smoothed,
            seed: 0,
            weight_decay: AdamWConfig::default().weight_decay,
            hidden_dims: vec![EncoderSpec::DEFAULT_HIDDEN],
            embed_dim: EncoderSpec::DEFAULT_OUTPUT,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::validation("batch_size must be >= 2"));
        }
        if self.epochs == 0 {
            return Err(Error::validation("epochs must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::validation("learning_rate must be > 0"));
        }
        self.loss_config().validate()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            temperature: self.temperature,
            mode: self.objective,
        }
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

struct Optimizer {
    weights: Vec<AdamWState>,
    biases: Vec<AdamWState>,
}

impl Optimizer {
    fn new(enc: &Encoder, cfg: AdamWConfig) -> Self {
        Self {
            weights: enc.layers.iter().map(|l| AdamWState::new(l.weight.shape(), cfg)).collect(),
            biases: enc.layers.iter().map(|l| AdamWState::new(l.bias.shape(), cfg)).collect(),
        }
    }

    fn apply(&mut self, enc: &mut Encoder, g: &EncoderGrads) -> Result<()> {
        for (i, layer) in enc.layers.iter_mut().enumerate() {
            self.weights[i].step(&mut layer.weight, &g.weights[i])?;
            self.biases[i].step(&mut layer.bias, &g.biases[i])?;
        }
        Ok(())
    }
}

/// Trains both encoders on `dataset` with the contrastive objective.
///
/// Deterministic in `(dataset, cfg)`: initialization and the per-epoch
/// shuffles all draw from one ChaCha stream seeded by `cfg.seed`.
pub fn train(dataset: &PairedDataset, cfg: &TrainConfig) -> Result<ModelCheckpoint> {
    cfg.validate()?;
    dataset.validate()?;
    let n = dataset.n_spots();
    if n < 2 {
        return Err(Error::validation(format!(
            "training needs at least 2 spots, dataset has {n}"
        )));
    }
    let mut cfg = cfg.clone();
    let mut warnings = Vec::new();
    if cfg.batch_size > n {
        let msg = format!("batch_size {} clamped to dataset size {n}", cfg.batch_size);
        log::warn!("{msg}");
        warnings.push(msg);
        cfg.batch_size = n;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let img_spec = EncoderSpec::new(dataset.features.cols(), cfg.hidden_dims.clone(), cfg.embed_dim);
    let expr_spec = EncoderSpec::new(dataset.expression.cols(), cfg.hidden_dims.clone(), cfg.embed_dim);
    let mut image = Encoder::init(img_spec, &mut rng)?;
    let mut expression = Encoder::init(expr_spec, &mut rng)?;
    let mut opt_img = Optimizer::new(&image, cfg.adamw());
    let mut opt_expr = Optimizer::new(&expression, cfg.adamw());
    let loss_cfg = cfg.loss_config();

    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            // a single pair carries no contrastive signal
            if idx.len() < 2 {
                continue;
            }
            let v = dataset.features.select_rows(idx);
            let x = dataset.expression.select_rows(idx);
            let (h_v, cache_v) = image.forward_cached(&v)?;
            let (h_x, cache_x) = expression.forward_cached(&x)?;
            let out = contrastive_loss(&h_v, &h_x, &loss_cfg).map_err(|e| match e {
                Error::Numerical(m) => {
                    Error::Numerical(format!("epoch {} batch {bi}: {m}", epoch + 1))
                }
                other => other,
            })?;
            let g_img = image.backward(&cache_v, &out.grad_h_v)?;
            let g_expr = expression.backward(&cache_x, &out.grad_h_x)?;
            opt_img.apply(&mut image, &g_img)?;
            opt_expr.apply(&mut expression, &g_expr)?;
            total += out.loss;
            batches += 1;
        }
        let mean = total / batches.max(1) as f64;
        if !mean.is_finite() {
            return Err(Error::Numerical(format!("epoch {} mean loss is {mean}", epoch + 1)));
        }
        log::debug!("epoch {} loss {mean:.6}", epoch + 1);
        loss_trace.push(mean);
    }

    let params_ok = image
        .layers
        .iter()
        .chain(&expression.layers)
        .all(|l| l.weight.is_finite() && l.bias.is_finite());
    if !params_ok {
        return Err(Error::Numerical("training produced non-finite weights".into()));
    }
    Ok(ModelCheckpoint {
        image,
        expression,
        config: cfg,
        loss_trace,
        warnings,
        created: None,
    })
}

/// Mean contrastive loss over consecutive batches of `dataset` in row order,
/// without updating anything.
pub fn evaluate_loss(ckpt: &ModelCheckpoint, dataset: &PairedDataset, batch_size: usize) -> Result<f64> {
    let n = dataset.n_spots();
    let idx: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    let mut count = 0;
    for chunk in idx.chunks(batch_size.max(2)) {
        if chunk.len() < 2 {
            continue;
        }
        let h_v = ckpt.image.forward(&dataset.features.select_rows(chunk))?;
        let h_x = ckpt.expression.forward(&dataset.expression.select_rows(chunk))?;
        total += contrastive_loss(&h_v, &h_x, &ckpt.config.loss_config())?.loss;
        count += 1;
    }
    Ok(total / count.max(1) as f64)
}
