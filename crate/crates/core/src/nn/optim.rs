use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer over an ordered list of parameter blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    frozen: Vec<bool>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, blocks: &[&Tensor]) -> Self {
        Self {
            cfg,
            m: blocks.iter().map(|b| vec![0.0; b.len()]).collect(),
            v: blocks.iter().map(|b| vec![0.0; b.len()]).collect(),
            frozen: vec![false; blocks.len()],
            t: 0,
        }
    }

    pub fn freeze(&mut self, block: usize) {
        self.frozen[block] = true;
    }

    pub fn is_frozen(&self, block: usize) -> bool {
        self.frozen[block]
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update with step size `lr * lr_scale`. Frozen blocks are left
    /// untouched bit-for-bit; any non-finite gradient in a trainable block
    /// aborts before anything is modified.
    pub fn step_scaled(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], lr_scale: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape("adam blocks", self.m.len(), params.len().min(grads.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != p.len() {
                return Err(Error::shape(format!("adam block {i}"), self.m[i].len(), g.len()));
            }
            if !self.frozen[i] && !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter block {i}")));
            }
        }
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let lr = c.lr * lr_scale;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if self.frozen[i] {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        self.step_scaled(params, grads, 1.0)
    }
}
