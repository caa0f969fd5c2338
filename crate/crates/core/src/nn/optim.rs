//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::{Gradients, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment estimates and step counter for one parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.entries().iter().map(|e| Tensor::zeros(e.tensor.shape())).collect();
        Self {
            config,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// Applies one update:
    ///
    /// ```text
    /// p ← p − lr·wd·p
    /// m ← β1·m + (1−β1)·g,   v ← β2·v + (1−β2)·g²
    /// p ← p − lr·m̂ / (√v̂ + ε)   with bias-corrected m̂, v̂
    /// ```
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != params.len() || self.first_moment.len() != params.len() {
            return Err(Error::shape(
                "adamw_step",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for ((entry, g), m) in params.entries().iter().zip(grads.as_slice()).zip(&self.first_moment) {
            entry.tensor.check_same_shape(g, "adamw_step")?;
            entry.tensor.check_same_shape(m, "adamw_step")?;
        }
        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - (beta1 as f64).powi(self.step as i32);
        let bc2 = 1.0 - (beta2 as f64).powi(self.step as i32);
        for (((entry, g), m), v) in params
            .iter_mut()
            .zip(grads.as_slice())
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let p = entry.tensor.data_mut();
            for (((pi, &gi), mi), vi) in p.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *pi -= lr * weight_decay * *pi;
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi as f64 / bc1;
                let v_hat = *vi as f64 / bc2;
                *pi -= (lr as f64 * m_hat / (v_hat.sqrt() + eps as f64)) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f32) -> ParamStore {
        let mut p = ParamStore::new();
        p.add("w", Tensor::scalar(value));
        p
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let mut params = one_param(0.7);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut state = OptimizerState::new(cfg, &params);
        let g = Gradients::zeros_like(&params);
        for _ in 0..10 {
            state.step(&mut params, &g).unwrap();
        }
        assert_eq!(params.entries()[0].tensor.data()[0], 0.7);
        assert_eq!(state.step, 10);
    }

    #[test]
    fn first_step_matches_hand_recursion() {
        let mut params = one_param(1.0);
        let mut state = OptimizerState::new(AdamWConfig::default(), &params);
        let mut g = Gradients::zeros_like(&params);
        g.slot_mut(0).data_mut()[0] = 1.0;
        state.step(&mut params, &g).unwrap();
        // m̂ = 1, v̂ = 1: w = 1 − 1e−4·(1/(1+1e−8)) − 1e−4·0.01·1
        let expected = 1.0f64 - 1e-4 * (1.0 / (1.0 + 1e-8)) - 1e-4 * 0.01;
        let got = params.entries()[0].tensor.data()[0] as f64;
        assert!((got - expected).abs() < 1e-7, "{got} vs {expected}");
    }

    #[test]
    fn misaligned_gradients_rejected() {
        let mut params = one_param(1.0);
        let mut state = OptimizerState::new(AdamWConfig::default(), &params);
        let g = Gradients::zeros_like(&ParamStore::new());
        assert!(state.step(&mut params, &g).is_err());
    }
}
