//! Adam with the inverse-square-root warm-up schedule.

use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::math;
use crate::params::ParamStore;

/// `d^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
pub fn noam_lr(step: u64, warmup: u64, d: usize) -> Result<f64> {
    if step < 1 {
        return Err(contract("learning-rate step counts from 1"));
    }
    if warmup < 1 {
        return Err(contract("warm-up must be at least one step"));
    }
    let s = step as f64;
    let w = warmup as f64;
    let decay = 1.0 / math::sqrt(s);
    let ramp = s * math::powf(w, -1.5);
    Ok(decay.min(ramp) / math::sqrt(d as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// One bias-corrected update of every trainable parameter. Any
    /// non-finite gradient aborts before anything is modified.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(contract("gradient buffers do not match the parameter set"));
        }
        for ((_, p), g) in params.iter().zip(grads) {
            if p.value.numel() != g.len() {
                return Err(contract(alloc::format!("gradient length mismatch for {}", p.name)));
            }
            if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::Diverged(alloc::format!(
                    "non-finite gradient {} in {} at element {i}",
                    g[i],
                    p.name
                )));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - math::powf(beta1, self.step as f64);
        let c2 = 1.0 - math::powf(beta2, self.step as f64);
        for (i, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grads[i][k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                *w -= lr * m_hat / (math::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}
