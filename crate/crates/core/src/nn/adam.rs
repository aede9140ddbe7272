use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moment accumulators over a fixed sequence of parameter slices.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one bias-corrected update. Slices are consumed in order and
    /// must add up to the size the state was created with. Nothing is
    /// modified when a gradient is non-finite.
    pub fn step<'p, 'g>(
        &mut self,
        params: impl IntoIterator<Item = &'p mut [f64]>,
        grads: impl IntoIterator<Item = &'g [f64]>,
    ) -> Result<()> {
        let grads: Vec<&[f64]> = grads.into_iter().collect();
        let total: usize = grads.iter().map(|g| g.len()).sum();
        if total != self.m.len() {
            return Err(Error::validation(format!(
                "optimizer tracks {} parameters, got {total} gradients",
                self.m.len()
            )));
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::training("non-finite gradient"));
        }
        let mut params: Vec<&mut [f64]> = params.into_iter().collect();
        if params.len() != grads.len() || params.iter().zip(&grads).any(|(p, g)| p.len() != g.len()) {
            return Err(Error::validation("parameter and gradient shapes differ"));
        }

        self.t += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let mut offset = 0;
        for (p, g) in params.iter_mut().zip(&grads) {
            let m = &mut self.m[offset..offset + g.len()];
            let v = &mut self.v[offset..offset + g.len()];
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
            offset += g.len();
        }
        Ok(())
    }
}
