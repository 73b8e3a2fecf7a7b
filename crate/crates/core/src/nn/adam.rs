//! Adam optimizer with bias correction, plus global-norm gradient clipping.

use super::array::Array2;
use super::store::ParameterStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment buffers, aligned with the store's registration order.
#[derive(Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Array2>,
    pub v: Vec<Array2>,
}

impl Adam {
    pub fn new(store: &ParameterStore, config: AdamConfig) -> Self {
        let m = store
            .ids()
            .map(|id| Array2::zeros(store.value(id).rows(), store.value(id).cols()))
            .collect::<Vec<_>>();
        let v = m.clone();
        Adam {
            config,
            step: 0,
            m,
            v,
        }
    }

    /// Apply one update from the store's gradient buffers, then zero them.
    /// Fails on any non-finite gradient, naming the offending parameter.
    pub fn step(&mut self, store: &mut ParameterStore, lr: f64) -> Result<()> {
        for id in store.ids().collect::<Vec<_>>() {
            if !store.grad(id).all_finite() {
                return Err(Error::NonFiniteGradient(store.name(id).to_string()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (idx, id) in store.ids().enumerate().collect::<Vec<_>>() {
            let g_owned: Vec<f64> = store.grad(id).data().to_vec();
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            let value = store.value_mut(id).data_mut();
            for j in 0..g_owned.len() {
                let g = g_owned[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                value[j] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`;
/// returns the factor applied.
pub fn clip_gradients(store: &mut ParameterStore, max_norm: f64) -> f64 {
    debug_assert!(max_norm > 0.0);
    let norm = store.grad_norm();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let factor = max_norm / norm;
    store.scale_grads(factor);
    factor
}
