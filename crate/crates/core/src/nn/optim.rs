use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Module;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip over the updated parameters; 0 disables.
    pub grad_clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
        }
    }
}

/// Adam over the parameters accepted by a name filter. Parameters outside
/// the filter are never written.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: HashMap::new(),
        }
    }

    /// Global L2 norm of the selected gradients.
    pub fn grad_norm<M: Module + ?Sized>(model: &M, select: &dyn Fn(&str) -> bool) -> f64 {
        let mut s = 0.0;
        model.visit("", &mut |name, p| {
            if select(name) {
                s += p.grad.iter().map(|g| g * g).sum::<f64>();
            }
        });
        s.sqrt()
    }

    /// One update with learning rate `lr`; returns the pre-clip gradient norm.
    pub fn step<M: Module + ?Sized>(&mut self, model: &mut M, select: &dyn Fn(&str) -> bool, lr: f64) -> f64 {
        let norm = Self::grad_norm(model, select);
        let clip = if self.config.grad_clip > 0.0 && norm > self.config.grad_clip {
            self.config.grad_clip / norm
        } else {
            1.0
        };
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let moments = &mut self.moments;
        model.visit_mut("", &mut |name, p| {
            if !select(name) {
                return;
            }
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
            for i in 0..p.value.len() {
                let g = p.grad[i] * clip;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.value[i] -= lr * mh / (vh.sqrt() + c.eps);
            }
        });
        norm
    }
}
