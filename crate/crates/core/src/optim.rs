//! Adam and the plateau learning-rate schedule.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates of one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamSlot {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    /// Number of updates this tensor has received.
    pub t: u64,
}

/// Adam with per-tensor step counts: tensors that receive no gradient in a
/// step are left untouched, moments included.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub slots: BTreeMap<String, AdamSlot>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, slots: BTreeMap::new() }
    }

    /// Update every parameter named in `grads`. `lookup` resolves a name to
    /// its tensor.
    pub fn step<'p, F>(&mut self, lr: f64, grads: &BTreeMap<String, Tensor<f32>>, mut lookup: F) -> Result<()>
    where
        F: FnMut(&str) -> Option<&'p mut Tensor<f32>>,
    {
        let AdamConfig { beta1, beta2, eps } = self.config;
        for (name, g) in grads {
            let Some(p) = lookup(name) else {
                bail!(Config, "gradient for unknown parameter `{name}`");
            };
            if p.shape() != g.shape() {
                bail!(Shape, "gradient {} does not match parameter `{name}` {}", g.shape(), p.shape());
            }
            let n = g.data().len();
            let slot = self.slots.entry(name.clone()).or_insert_with(|| AdamSlot { m: vec![0.0; n], v: vec![0.0; n], t: 0 });
            slot.t += 1;
            let bc1 = 1.0 - libm::pow(beta1, slot.t as f64);
            let bc2 = 1.0 - libm::pow(beta2, slot.t as f64);
            for (((w, &gv), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(&mut slot.m).zip(&mut slot.v) {
                let gv = gv as f64;
                let mn = beta1 * *m as f64 + (1.0 - beta1) * gv;
                let vn = beta2 * *v as f64 + (1.0 - beta2) * gv * gv;
                *m = mn as f32;
                *v = vn as f32;
                let update = lr * (mn / bc1) / (libm::sqrt(vn / bc2) + eps);
                *w = (*w as f64 - update) as f32;
            }
        }
        Ok(())
    }

    /// Convenience for a plain parameter set.
    pub fn step_params(&mut self, lr: f64, grads: &BTreeMap<String, Tensor<f32>>, params: &mut ParamSet<f32>, prefix: &str) -> Result<()> {
        let mut refs: BTreeMap<String, &mut Tensor<f32>> =
            params.iter_mut().map(|(k, v)| (alloc::format!("{prefix}{k}"), v)).collect();
        self.step(lr, grads, |name| refs.remove(name))
    }
}

/// Divide the learning rate by `factor` whenever an epoch fails to improve
/// the best validation loss by at least `threshold` (relative); once
/// `max_decays` decays have been spent, the next stalled epoch stops
/// training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub max_decays: u32,
    pub threshold: f64,
    pub decays: u32,
    pub best: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plateau {
    Improved,
    Decayed,
    Stop,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, max_decays: u32, threshold: f64) -> Self {
        PlateauScheduler { lr, factor, max_decays, threshold, decays: 0, best: None }
    }

    fn improves(&self, loss: f64) -> bool {
        match self.best {
            None => true,
            Some(best) => loss < best - self.threshold * best.abs(),
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> Plateau {
        if self.improves(val_loss) {
            self.best = Some(val_loss);
            Plateau::Improved
        } else if self.decays < self.max_decays {
            self.decays += 1;
            self.lr /= self.factor;
            Plateau::Decayed
        } else {
            Plateau::Stop
        }
    }
}
