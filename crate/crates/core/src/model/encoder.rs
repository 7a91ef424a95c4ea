use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

/// Layer widths of one fully connected encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl EncoderSpec {
    pub const DEFAULT_HIDDEN: usize = 512;
    pub const DEFAULT_OUTPUT: usize = 256;

    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation: Activation::Relu,
        }
    }

    pub fn with_defaults(input_dim: usize) -> Self {
        Self::new(input_dim, vec![Self::DEFAULT_HIDDEN], Self::DEFAULT_OUTPUT)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::validation(format!("encoder dims must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in self.hidden_dims.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }
}

/// Affine map `x W + b` with `W: in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DenseMatrix,
    pub bias: DenseMatrix,
}

impl Layer {
    fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut y = x.matmul(&self.weight)?;
        let b = self.bias.data();
        for r in 0..y.rows() {
            for (v, &bv) in y.row_mut(r).iter_mut().zip(b) {
                *v += bv;
            }
        }
        Ok(y)
    }
}

/// Gradients for every layer, in layer order.
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<DenseMatrix>,
}

/// Layer activations kept for the backward pass; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    acts: Vec<DenseMatrix>,
}

/// Multilayer perceptron: rectified hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub spec: EncoderSpec,
    pub layers: Vec<Layer>,
}

impl Encoder {
    /// Uniform He-style initialization `U(±√(6/fan_in))`, zero biases.
    pub fn init(spec: EncoderSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = (6.0 / fan_in as f64).sqrt() as f32;
                let w = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Layer {
                    weight: DenseMatrix::new(fan_in, fan_out, w).expect("sized above"),
                    bias: DenseMatrix::zeros(1, fan_out),
                }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    /// Builds an encoder from explicit layers, checking them against `spec`.
    pub fn from_layers(spec: EncoderSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::validation(format!(
                "spec declares {} layers, got {}",
                dims.len(),
                layers.len()
            )));
        }
        for ((fi, fo), l) in dims.iter().zip(&layers) {
            if l.weight.shape() != (*fi, *fo) || l.bias.shape() != (1, *fo) {
                return Err(Error::shape("encoder layer", (*fi, *fo), l.weight.shape()));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &DenseMatrix) -> Result<(DenseMatrix, ForwardCache)> {
        if x.cols() != self.spec.input_dim {
            return Err(Error::shape("encoder input", x.shape(), (x.rows(), self.spec.input_dim)));
        }
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&h)?;
            if i < last {
                z.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(std::mem::replace(&mut h, z));
        }
        Ok((h, ForwardCache { acts }))
    }

    /// Backpropagates `d_out` (gradient w.r.t. the encoder output).
    pub fn backward(&self, cache: &ForwardCache, d_out: &DenseMatrix) -> Result<EncoderGrads> {
        let n = self.layers.len();
        let mut weights = vec![DenseMatrix::zeros(0, 0); n];
        let mut biases = vec![DenseMatrix::zeros(0, 0); n];
        let mut dz = d_out.clone();
        for i in (0..n).rev() {
            let input = &cache.acts[i];
            weights[i] = input.t_matmul(&dz)?;
            let mut db = vec![0.0f64; dz.cols()];
            for r in dz.iter_rows() {
                for (s, &v) in db.iter_mut().zip(r) {
                    *s += f64::from(v);
                }
            }
            biases[i] = DenseMatrix::from_f64(1, dz.cols(), &db)?;
            if i > 0 {
                let mut dprev = dz.matmul_t(&self.layers[i].weight)?;
                // rectifier: input > 0 exactly where the pre-activation was positive
                for (g, &a) in dprev.data_mut().iter_mut().zip(input.data()) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
                dz = dprev;
            }
        }
        Ok(EncoderGrads { weights, biases })
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.data().len())
            .sum()
    }
}
