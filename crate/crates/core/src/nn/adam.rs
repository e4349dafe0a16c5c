//! Adam with global gradient-norm clipping.

use super::graph::Grads;
use super::params::{Binding, ParamStore};
use crate::{Mat, Real};

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    /// Global L2 norm ceiling applied across all gradients of a step.
    pub clip_norm: Option<Real>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

/// Optimizer state: first/second moment per parameter plus the step count.
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let m = (0..store.len())
            .map(|i| Mat::zeros(store.value(super::params::ParamId(i)).dim()))
            .collect();
        let v = (0..store.len())
            .map(|i| Mat::zeros(store.value(super::params::ParamId(i)).dim()))
            .collect();
        Adam { cfg, t: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients of `binding`. Parameters that
    /// received no gradient this step are left untouched (their moments do
    /// not decay).
    pub fn step(&mut self, store: &mut ParamStore, binding: &Binding, grads: &Grads) {
        self.t += 1;
        let mut norm_sq = 0.0;
        for i in 0..store.len() {
            if let Some(g) = binding.grad(grads, super::params::ParamId(i)) {
                norm_sq += g.iter().map(|x| x * x).sum::<Real>();
            }
        }
        let norm = norm_sq.sqrt();
        let scale = match self.cfg.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };

        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for i in 0..store.len() {
            let pid = super::params::ParamId(i);
            let Some(g) = binding.grad(grads, pid) else {
                continue;
            };
            let g = g * scale;
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(&g, |mi, gi| {
                *mi = self.cfg.beta1 * *mi + (1.0 - self.cfg.beta1) * gi
            });
            v.zip_mut_with(&g, |vi, gi| {
                *vi = self.cfg.beta2 * *vi + (1.0 - self.cfg.beta2) * gi * gi
            });
            let lr = self.cfg.lr;
            let eps = self.cfg.eps;
            let value = store.value_mut(pid);
            for ((p, mi), vi) in value.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }

    /// Serializable view of the optimizer state (step, moments in store
    /// order).
    pub fn state(&self) -> (u64, &[Mat], &[Mat]) {
        (self.t, &self.m, &self.v)
    }

    pub fn restore(&mut self, t: u64, m: Vec<Mat>, v: Vec<Mat>) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.t = t;
        self.m = m;
        self.v = v;
    }
}
