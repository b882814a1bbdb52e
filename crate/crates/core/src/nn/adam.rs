//! Adam with bias correction; non-trainable parameters are left untouched.

use super::{Gradients, ParamStore};
use crate::scalar::Scalar;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug)]
pub struct Adam<S: Scalar> {
    pub config: AdamConfig,
    pub step_count: u64,
    m: Vec<Option<Array2<S>>>,
    v: Vec<Option<Array2<S>>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step_count: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Apply one update. Gradients absent for a slot, and slots marked
    /// non-trainable, are skipped.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &Gradients<S>) {
        self.m.resize_with(store.len(), || None);
        self.v.resize_with(store.len(), || None);
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = S::of_f64(self.config.beta1);
        let b2 = S::of_f64(self.config.beta2);
        let one = S::one();
        let lr = S::of_f64(self.config.lr);
        let eps = S::of_f64(self.config.eps);
        let bias1 = one - b1.powi(t);
        let bias2 = one - b2.powi(t);

        for id in store.ids() {
            if !store.is_trainable(id) {
                continue;
            }
            let Some(grad) = grads.get(id) else { continue };
            let dim = store.get(id).dim();
            let m = self.m[id.0].get_or_insert_with(|| Array2::zeros(dim));
            let v = self.v[id.0].get_or_insert_with(|| Array2::zeros(dim));
            let value = store.value_mut(id);
            for ((pv, &g), (mi, vi)) in value
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    /// Flatten optimizer state for checkpointing: per slot `(m, v)`.
    pub fn state(&self) -> Vec<Option<(Array2<S>, Array2<S>)>> {
        self.m
            .iter()
            .zip(&self.v)
            .map(|(m, v)| match (m, v) {
                (Some(m), Some(v)) => Some((m.clone(), v.clone())),
                _ => None,
            })
            .collect()
    }

    pub fn restore(&mut self, step_count: u64, state: Vec<Option<(Array2<S>, Array2<S>)>>) {
        self.step_count = step_count;
        self.m = state.iter().map(|s| s.as_ref().map(|(m, _)| m.clone())).collect();
        self.v = state.into_iter().map(|s| s.map(|(_, v)| v)).collect();
    }
}
