use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam hyper-parameters plus a step-decay learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiply the learning rate by `decay_factor` every this many epochs.
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_every: 5,
            decay_factor: 0.1,
        }
    }
}

impl AdamConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.decay_every == 0 {
            return self.lr;
        }
        self.lr * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, cfg: &AdamConfig) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(weights: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if weights.len() != grads.len() || weights.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} weights, {} grads, {} moments",
            weights.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..weights.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        weights[i] -= lr * mh / (vh.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_weights_and_decays_moments() {
        let cfg = AdamConfig::default();
        let mut s = AdamState::new(2, &cfg);
        let mut w = vec![1.0, -2.0];
        adam_step(&mut w, &[0.0, 0.0], &mut s, 1e-3).unwrap();
        assert_eq!(w, vec![1.0, -2.0]);

        s.m = vec![0.5, -0.5];
        s.v = vec![0.25, 0.25];
        adam_step(&mut w, &[0.0, 0.0], &mut s, 1e-3).unwrap();
        assert!((s.m[0] - 0.45).abs() < 1e-15);
        assert!((s.v[1] - 0.25 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_is_lr_sign() {
        let cfg = AdamConfig::default();
        let mut s = AdamState::new(2, &cfg);
        let mut w = vec![0.0, 0.0];
        let lr = 1e-3;
        let mut prev = w.clone();
        for _ in 0..5000 {
            prev.copy_from_slice(&w);
            adam_step(&mut w, &[3.0, -0.02], &mut s, lr).unwrap();
        }
        assert!(((prev[0] - w[0]) - lr).abs() < 1e-8);
        assert!(((w[1] - prev[1]) - lr).abs() < 1e-8);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let cfg = AdamConfig::default();
        let mut s = AdamState::new(2, &cfg);
        let mut w = vec![3.0, -2.0];
        let target = [0.7, 1.3];
        for step in 0..2000 {
            let g = [2.0 * (w[0] - target[0]), 8.0 * (w[1] - target[1])];
            // lr 0.05 decayed tenfold at step 1000
            let lr = if step < 1000 { 0.05 } else { 0.005 };
            adam_step(&mut w, &g, &mut s, lr).unwrap();
        }
        assert!((w[0] - target[0]).abs() < 1e-3 && (w[1] - target[1]).abs() < 1e-3, "{w:?}");
    }

    #[test]
    fn schedule_and_shape_errors() {
        let cfg = AdamConfig::default();
        assert_eq!(cfg.lr_at(0), 1e-4);
        assert!((cfg.lr_at(5) - 1e-5).abs() < 1e-20);
        assert!((cfg.lr_at(12) - 1e-6).abs() < 1e-20);
        let mut s = AdamState::new(3, &cfg);
        assert!(adam_step(&mut [0.0; 2], &[0.0; 2], &mut s, 1e-3).is_err());
    }
}
