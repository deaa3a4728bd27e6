use serde::{Deserialize, Serialize};

use super::{ParamStore, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
///
/// Moment buffers are indexed like the store's parameters and allocated on
/// the first step. Frozen parameters are skipped entirely.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<S>) -> Result<()> {
        if let Some(p) = store.iter().map(|(_, p)| p).find(|p| !p.frozen && p.grad.is_none()) {
            return Err(Error::MissingGrad(p.name.clone()));
        }
        while self.first.len() < store.len() {
            let (_, p) = store.iter().nth(self.first.len()).unwrap();
            let n = p.value.numel();
            self.first.push(vec![S::zero(); n]);
            self.second.push(vec![S::zero(); n]);
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let bias1 = S::one() - S::lit(c.beta1.powi(t));
        let bias2 = S::one() - S::lit(c.beta2.powi(t));
        let lr = S::lit(c.lr);
        let eps = S::lit(c.epsilon);

        for (i, p) in store.params_mut().iter_mut().enumerate() {
            if p.frozen {
                continue;
            }
            let grad = p.grad.as_ref().expect("checked above").data().to_vec();
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let values = std::sync::Arc::make_mut(&mut p.value).data_mut();
            for j in 0..values.len() {
                let g = grad[j];
                m[j] = b1 * m[j] + (S::one() - b1) * g;
                v[j] = b2 * v[j] + (S::one() - b2) * g * g;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                values[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
