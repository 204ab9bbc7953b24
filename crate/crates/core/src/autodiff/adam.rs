use serde::{Deserialize, Serialize};

use super::tensor::{ParamStore, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: AdamConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients held in `store`. Parameters
    /// without a gradient buffer are treated as having zero gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if store.is_empty() {
            return Ok(());
        }
        if self.first.is_empty() {
            self.first = store.ids().map(|id| vec![T::zero(); store.get(id).numel()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != store.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::lit(self.config.beta1);
        let b2 = T::lit(self.config.beta2);
        let lr = T::lit(self.config.lr);
        let eps = T::lit(self.config.epsilon);
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);

        for id in store.ids() {
            let tensor = store.get_mut(id);
            let (m, v) = (&mut self.first[id.0], &mut self.second[id.0]);
            if m.len() != tensor.numel() {
                return Err(Error::contract("parameter shape changed between optimizer steps"));
            }
            let Some(grad) = tensor.grad().map(<[T]>::to_vec) else {
                // zero gradient: moments decay, update follows the decayed moments
                for (mi, vi) in m.iter_mut().zip(v.iter_mut()) {
                    *mi *= b1;
                    *vi *= b2;
                }
                apply(tensor.values_mut(), m, v, lr, eps, c1, c2);
                continue;
            };
            for ((mi, vi), &g) in m.iter_mut().zip(v.iter_mut()).zip(&grad) {
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
            }
            apply(tensor.values_mut(), m, v, lr, eps, c1, c2);
        }
        Ok(())
    }
}

fn apply<T: Real>(params: &mut [T], m: &[T], v: &[T], lr: T, eps: T, c1: T, c2: T) {
    for ((p, &mi), &vi) in params.iter_mut().zip(m).zip(v) {
        let m_hat = mi / c1;
        let v_hat = vi / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
