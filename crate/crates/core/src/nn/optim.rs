//! Adam over flat parameter vectors, plus soft target-network updates.

use serde::{Deserialize, Serialize};

/// Bias-corrected Adam. Performs descent on the supplied gradients; callers
/// doing gradient ascent pass the negated gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "adam shape mismatch");
        assert_eq!(grads.len(), self.m.len(), "adam shape mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

/// Elementwise convex blend `target <- tau * source + (1 - tau) * target`.
pub fn soft_update(target: &mut [f64], source: &[f64], tau: f64) {
    assert_eq!(target.len(), source.len(), "soft_update shape mismatch");
    for (t, s) in target.iter_mut().zip(source) {
        *t = tau * s + (1.0 - tau) * *t;
    }
}
