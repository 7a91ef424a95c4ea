use serde::{Deserialize, Serialize};

use super::DenseMatrix;
use crate::error::{Error, Result};

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment estimates for one parameter matrix.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub config: AdamWConfig,
    m: Vec<f32>,
    v: Vec<f32>,
    shape: (usize, usize),
    t: u64,
}

impl AdamWState {
    pub fn new(shape: (usize, usize), config: AdamWConfig) -> Self {
        let n = shape.0 * shape.1;
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            shape,
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One decoupled-weight-decay Adam update of `param` in place.
    pub fn step(&mut self, param: &mut DenseMatrix, grad: &DenseMatrix) -> Result<()> {
        if param.shape() != self.shape {
            return Err(Error::shape("adamw_step", param.shape(), self.shape));
        }
        if grad.shape() != self.shape {
            return Err(Error::shape("adamw_step", param.shape(), grad.shape()));
        }
        let c = self.config;
        if !(c.lr > 0.0) {
            return Err(Error::validation(format!("learning rate must be > 0, got {}", c.lr)));
        }
        self.t += 1;
        let t = self.t as f64;
        let (b1, b2) = (f64::from(c.beta1), f64::from(c.beta2));
        let bc1 = 1.0 - b1.powf(t);
        let bc2 = 1.0 - b2.powf(t);
        let lr = f64::from(c.lr);
        let decay = 1.0 - lr * f64::from(c.weight_decay);
        let eps = f64::from(c.eps);
        for (((p, &g), m), v) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let g = f64::from(g);
            let m_new = b1 * f64::from(*m) + (1.0 - b1) * g;
            let v_new = b2 * f64::from(*v) + (1.0 - b2) * g * g;
            *m = m_new as f32;
            *v = v_new as f32;
            let m_hat = m_new / bc1;
            let v_hat = v_new / bc2;
            *p = (f64::from(*p) * decay - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
        }
        Ok(())
    }
}

/// Functional form: returns the updated parameter.
pub fn adamw_step(
    param: &DenseMatrix,
    grad: &DenseMatrix,
    state: &mut AdamWState,
) -> Result<DenseMatrix> {
    let mut p = param.clone();
    state.step(&mut p, grad)?;
    Ok(p)
}
