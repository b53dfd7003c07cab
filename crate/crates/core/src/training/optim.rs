use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::SdeLibrary;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `0` disables it.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: 0.0 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let betas_ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        if !(self.lr > 0.0 && self.eps > 0.0 && betas_ok && self.clip_norm >= 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Adam over every trainable tensor of a library, in library order.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients stored in the tensors.
    pub fn step(&mut self, library: &mut SdeLibrary) {
        let mut params: Vec<_> = library
            .iter_mut()
            .flat_map(|(_, s)| s.networks_mut())
            .flat_map(|n| n.params_mut())
            .filter(|p| p.requires_grad())
            .collect();
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "parameter set changed between steps");
        let scale = if self.cfg.clip_norm > 0.0 {
            let norm = params
                .iter()
                .filter_map(|p| p.grad())
                .flat_map(|g| g.iter())
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            if norm > self.cfg.clip_norm {
                self.cfg.clip_norm / norm
            } else {
                1.0
            }
        } else {
            1.0
        };
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Some(grad) = p.grad().map(|g| g.to_vec()) else { continue };
            for (((x, g), mi), vi) in p.values_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g * scale;
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
                *x -= c.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + c.eps);
            }
        }
    }
}
