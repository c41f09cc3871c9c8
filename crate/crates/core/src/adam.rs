//! Adam with bias correction over flat parameter buffers.

use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Decoupled weight decay, applied only inside `decay_ranges`.
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    decay_ranges: Vec<Range<usize>>,
}

impl Adam {
    /// Fresh state: zero moments, step counter 0.
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Adam {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            decay_ranges: Vec::new(),
        }
    }

    pub fn with_decay_ranges(mut self, ranges: Vec<Range<usize>>) -> Self {
        self.decay_ranges = ranges;
        self
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step_with_lr(params, grads, self.config.learning_rate);
    }

    pub fn step_with_lr(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let t = self.t as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        if self.config.weight_decay > 0.0 {
            let factor = 1.0 - lr * self.config.weight_decay;
            for r in &self.decay_ranges {
                for p in &mut params[r.clone()] {
                    *p *= factor;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_matches_closed_form() {
        // f(x) = 0.5 * a * (x - c)^2, gradient a * (x - c).
        let (a, c, x0, lr) = (3.0, 1.5, -0.25, 0.01);
        let g: f64 = a * (x0 - c);
        let cfg = AdamConfig::with_lr(lr);
        // After one step: m_hat = g, v_hat = g^2.
        let expected = x0 - lr * g / (g.abs() + cfg.eps);
        let mut adam = Adam::new(1, cfg);
        let mut x = [x0];
        adam.step(&mut x, &[g]);
        assert!((x[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn second_step_uses_bias_corrected_moments() {
        let cfg = AdamConfig::with_lr(0.1);
        let mut adam = Adam::new(1, cfg);
        let mut x = [0.0];
        adam.step(&mut x, &[1.0]);
        adam.step(&mut x, &[-2.0]);
        let m = 0.9 * 0.1 * 1.0 + 0.1 * -2.0;
        let v = 0.999 * 0.001 * 1.0 + 0.001 * 4.0;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.999f64.powi(2));
        let expected = -0.1 * 1.0 / (1.0 + 1e-8) - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((x[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut adam = Adam::new(3, AdamConfig::with_lr(0.0));
        let mut x = [1.0, -2.0, 3.0];
        adam.step(&mut x, &[0.5, 0.5, -0.5]);
        assert_eq!(x, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn decay_only_touches_listed_ranges() {
        let mut cfg = AdamConfig::with_lr(0.1);
        cfg.weight_decay = 0.5;
        let mut adam = Adam::new(2, cfg).with_decay_ranges(std::iter::once(0..1).collect());
        let mut x = [1.0, 1.0];
        adam.step(&mut x, &[0.0, 0.0]);
        assert!((x[0] - 0.95).abs() < 1e-15);
        assert_eq!(x[1], 1.0);
    }
}
