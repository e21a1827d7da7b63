use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam hyper-parameters with a staircase learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_lr: f64,
    /// Multiplier applied once every `decay_interval` steps.
    pub decay_factor: f64,
    pub decay_interval: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(base_lr: f64, decay_factor: f64, decay_interval: u64) -> Self {
        AdamConfig {
            base_lr,
            decay_factor,
            decay_interval,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.base_lr > 0.0
            && self.decay_factor > 0.0
            && self.decay_factor <= 1.0
            && self.decay_interval > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid Adam settings: {self:?}")))
        }
    }

    /// `base_lr · decay_factor^⌊t / decay_interval⌋`
    pub fn lr_at(&self, t: u64) -> f64 {
        let exponent = (t / self.decay_interval) as i32;
        self.base_lr * self.decay_factor.powi(exponent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Number of completed updates.
    pub t: u64,
}

impl AdamState {
    /// Zeroed moment buffers shaped like `params`.
    pub fn new(config: AdamConfig, params: &[&[f64]]) -> Self {
        AdamState {
            config,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }

    pub fn effective_lr(&self) -> f64 {
        self.config.lr_at(self.t)
    }

    /// One bias-corrected Adam update. The step counter is incremented first
    /// and the decayed learning rate is taken at the new count. Returns the
    /// learning rate used. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) -> Result<f64> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::config("Adam state does not match parameter groups"));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::config("Adam state does not match parameter shapes"));
            }
        }
        if let Some(bad) = grads.iter().flatten().find(|g| !g.is_finite()) {
            return Err(Error::TrainingFault {
                step: self.t + 1,
                message: format!("non-finite gradient component {bad}"),
            });
        }
        self.t += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        let lr = self.config.lr_at(self.t);
        let bc1 = 1.0 - beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - beta2.powi(self.t.min(i32::MAX as u64) as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_schedule() {
        let c = AdamConfig::new(1e-4, 0.8, 5000);
        assert_eq!(c.lr_at(0), 1e-4);
        assert_eq!(c.lr_at(4999), 1e-4);
        assert!((c.lr_at(5000) - 0.8e-4).abs() < 1e-18);
        assert!((c.lr_at(10_000) - 0.64e-4).abs() < 1e-18);
        let est = AdamConfig::new(1e-4, 0.6, 2500);
        assert!((est.lr_at(2500) - 0.6e-4).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut w = vec![0.5, -1.0, 2.0];
        let before = w.clone();
        let mut state = AdamState::new(AdamConfig::new(1e-3, 1.0, 10), &[&w]);
        for _ in 0..5 {
            state.step(&mut [&mut w[..]], &[vec![0.0; 3]]).unwrap();
        }
        assert_eq!(w, before);
        assert_eq!(state.t, 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first update is lr · g/|g| (up to epsilon).
        let mut w = vec![1.0, 1.0];
        let mut state = AdamState::new(AdamConfig::new(0.01, 1.0, 10), &[&w]);
        state.step(&mut [&mut w[..]], &[vec![3.0, -0.2]]).unwrap();
        assert!((w[0] - 0.99).abs() < 1e-9);
        assert!((w[1] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut w = vec![1.0];
        let mut state = AdamState::new(AdamConfig::new(0.01, 1.0, 10), &[&w]);
        let err = state.step(&mut [&mut w[..]], &[vec![f64::NAN]]).unwrap_err();
        assert!(matches!(err, Error::TrainingFault { step: 1, .. }));
        assert_eq!(w, vec![1.0]);
        assert_eq!(state.t, 0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut w = vec![5.0, -3.0];
        let mut state = AdamState::new(AdamConfig::new(0.05, 1.0, 1000), &[&w]);
        for _ in 0..2000 {
            let g = vec![2.0 * (w[0] - 1.0), 2.0 * (w[1] + 2.0)];
            state.step(&mut [&mut w[..]], &[g]).unwrap();
        }
        assert!((w[0] - 1.0).abs() < 1e-3 && (w[1] + 2.0).abs() < 1e-3, "{w:?}");
    }

    #[test]
    fn bit_reproducible() {
        let run = || {
            let mut w = vec![0.3, 0.7, -0.1];
            let mut state = AdamState::new(AdamConfig::new(1e-2, 0.9, 3), &[&w]);
            for k in 0..20 {
                let g: Vec<f64> = w.iter().map(|x| (x * k as f64).sin()).collect();
                state.step(&mut [&mut w[..]], &[g]).unwrap();
            }
            (w, state)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(sa, sb);
    }
}
