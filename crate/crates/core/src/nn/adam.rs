use serde::{Deserialize, Serialize};

use super::{NnError, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-7 }
    }
}

/// Bias-corrected Adam with one pair of moment tensors per parameter.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self { config, step: 0, first: zeros(), second: zeros() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), NnError> {
        if store.iter().any(|p| !p.grad.is_finite()) {
            return Err(NnError::NonFiniteValue { op: "adam" });
        }
        if store.len() != self.first.len() {
            return Err(NnError::ShapeMismatch {
                op: "adam",
                detail: format!("{} parameters, {} moment slots", store.len(), self.first.len()),
            });
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((param, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let grads = param.grad.data();
            for (((x, &g), m), v) in param.value.data_mut().iter_mut().zip(grads).zip(m.data_mut()).zip(v.data_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *x -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
            }
        }
        if store.iter().any(|p| !p.value.is_finite()) {
            return Err(NnError::NonFiniteValue { op: "adam" });
        }
        store.zero_grads();
        Ok(())
    }
}
