//! Adam with bias correction, and elementwise gradient clipping.

use super::{ModelState, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, state: &ModelState) -> Self {
        let m = state.iter().map(|p| Tensor::zeros(p.value.rows, p.value.cols)).collect();
        let v = state.iter().map(|p| Tensor::zeros(p.value.rows, p.value.cols)).collect();
        Adam { config, m, v, t: 0 }
    }

    /// One update from the gradients accumulated in the state. Rejects the
    /// whole update if any gradient is non-finite.
    pub fn step(&mut self, state: &mut ModelState) -> Result<()> {
        for p in state.iter() {
            if p.trainable && !p.grad.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (id, p) in state.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            for ((w, g), (me, ve)) in p
                .value
                .data
                .iter_mut()
                .zip(&p.grad.data)
                .zip(m.data.iter_mut().zip(v.data.iter_mut()))
            {
                *me = c.beta1 * *me + (1.0 - c.beta1) * g;
                *ve = c.beta2 * *ve + (1.0 - c.beta2) * g * g;
                let m_hat = *me / bc1;
                let v_hat = *ve / bc2;
                *w -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Clamp every gradient element to [-bound, bound].
pub fn clip_gradients(state: &mut ModelState, bound: f64) {
    for p in state.iter_mut() {
        if p.trainable {
            for g in &mut p.grad.data {
                *g = g.clamp(-bound, bound);
            }
        }
    }
}
