use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: each step also subtracts `lr · weight_decay · θ`.
    pub weight_decay: f64,
}

/// First and second moment estimates; empty buffers for frozen parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, _, t)| if t.requires_grad { vec![0.0; t.numel()] } else { Vec::new() })
                .collect::<Vec<_>>()
        };
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of every trainable parameter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f32>], cfg: &AdamConfig) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape(
                "adam",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for id in 0..params.len() {
            let p = params.get_mut(id);
            if !p.requires_grad {
                continue;
            }
            let g = &grads[id];
            if g.len() != p.numel() || self.m[id].len() != p.numel() {
                return Err(Error::shape(
                    "adam",
                    format!("gradient of length {} for a parameter of {} elements", g.len(), p.numel()),
                ));
            }
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g[j] as f64;
                let mj = cfg.beta1 * m[j] as f64 + (1.0 - cfg.beta1) * gj;
                let vj = cfg.beta2 * v[j] as f64 + (1.0 - cfg.beta2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let update = (mj / bc1) / ((vj / bc2).sqrt() + cfg.eps) + cfg.weight_decay * *w as f64;
                *w = (*w as f64 - cfg.learning_rate * update) as f32;
            }
        }
        Ok(())
    }
}
