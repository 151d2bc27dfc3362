use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::params::{ParamId, ParamStore};
use super::tensor::Scalar;

/// Hyperparameters of Adam with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// AdamW over a fixed subset of a [`ParamStore`].
///
/// Moment buffers are `f64` regardless of the parameter type so the update
/// is identical for a given gradient sequence.
#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    lr: f64,
    warmup: u64,
    step: u64,
    ids: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<T: Scalar>(store: &ParamStore<T>, ids: Vec<ParamId>, lr: f64, config: AdamWConfig) -> Self {
        let m = ids.iter().map(|&id| vec![0.0; store.value(id).len()]).collect::<Vec<_>>();
        Self {
            config,
            lr,
            warmup: 0,
            step: 0,
            v: m.clone(),
            m,
            ids,
        }
    }

    /// Ramp the learning rate linearly from `lr / steps` to `lr` over the
    /// first `steps` updates.
    pub fn with_warmup(mut self, steps: u64) -> Self {
        self.warmup = steps;
        self
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    fn effective_lr(&self) -> f64 {
        if self.step < self.warmup {
            self.lr * self.step as f64 / self.warmup as f64
        } else {
            self.lr
        }
    }

    /// Apply one update. Parameters without a gradient are left untouched
    /// but still count towards the bias-correction step.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) {
        self.step += 1;
        let AdamWConfig {
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let lr = self.effective_lr();
        for (slot, &id) in self.ids.iter().enumerate() {
            let Some(g) = grads.get(id) else { continue };
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            let p = store.value_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i].to_f64_lossy();
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let mut theta = p[i].to_f64_lossy();
                theta *= 1.0 - lr * weight_decay;
                theta -= lr * mhat / (vhat.sqrt() + eps);
                p[i] = T::from_f64_lossy(theta);
            }
        }
    }
}
