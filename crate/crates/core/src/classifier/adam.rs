use serde::{Deserialize, Serialize};

use super::mlp::{MlpGrads, MlpModel};
use crate::scalar::Scalar;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: [Vec<f64>; 6],
    v: [Vec<f64>; 6],
}

impl AdamState {
    pub fn new<T: Scalar>(model: &MlpModel<T>) -> Self {
        let zeros = |p: &[T]| vec![0.0; p.len()];
        let p = model.params();
        let m = [zeros(p[0]), zeros(p[1]), zeros(p[2]), zeros(p[3]), zeros(p[4]), zeros(p[5])];
        Self { v: m.clone(), m }
    }

    /// One bias-corrected Adam update; `step` counts from 1.
    pub fn step<T: Scalar>(
        &mut self,
        model: &mut MlpModel<T>,
        grads: &MlpGrads<T>,
        step: u64,
        config: &AdamConfig,
    ) -> Result<()> {
        if step == 0 {
            return Err(Error::InvalidParameter("Adam step count starts at 1".into()));
        }
        let gs = grads.slices();
        if gs.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteGradient);
        }
        let bc1 = 1.0 - config.beta1.powf(step as f64);
        let bc2 = 1.0 - config.beta2.powf(step as f64);
        for (((param, g), m), v) in model
            .params_mut()
            .into_iter()
            .zip(gs)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            if param.len() != g.len() || m.len() != g.len() {
                return Err(Error::DimensionMismatch {
                    expected: param.len(),
                    found: g.len(),
                });
            }
            for i in 0..param.len() {
                let gi = g[i].to_f64_lossless();
                m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
                v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let p = param[i].to_f64_lossless() - config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
                param[i] = T::from_f64_lossy(p);
            }
        }
        Ok(())
    }
}
