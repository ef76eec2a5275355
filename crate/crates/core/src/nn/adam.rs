use serde::{Deserialize, Serialize};

use super::NnError;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one parameter group, which may span several tensors.
/// All tensors in the group share the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn shapes(&self) -> Vec<usize> {
        self.first_moment.iter().map(Vec::len).collect()
    }

    /// One bias-corrected Adam update over every tensor in the group.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), NnError> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(NnError::ParamCount {
                expected: self.first_moment.len(),
                actual: params.len(),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(NnError::ParamCount {
                    expected: m.len(),
                    actual: p.len().max(g.len()),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i];
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / correction1;
                let v_hat = v[j] / correction2;
                p[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
