use serde::{Deserialize, Serialize};

use crate::nn::{Grads, ParamStore};

use super::TrainError;

fn default_lr() -> f32 {
    1e-4
}
fn default_beta_1() -> f32 {
    0.5
}
fn default_beta_2() -> f32 {
    0.9
}
fn default_epsilon() -> f32 {
    1e-7
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam {
        #[serde(default = "default_lr")]
        learning_rate: f32,
        #[serde(default = "default_beta_1")]
        beta_1: f32,
        #[serde(default = "default_beta_2")]
        beta_2: f32,
        #[serde(default = "default_epsilon")]
        epsilon: f32,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            learning_rate: default_lr(),
            beta_1: default_beta_1(),
            beta_2: default_beta_2(),
            epsilon: default_epsilon(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let OptimizerConfig::Adam {
            learning_rate,
            beta_1,
            beta_2,
            epsilon,
        } = *self;
        let ok = learning_rate.is_finite()
            && learning_rate > 0.0
            && (0.0..1.0).contains(&beta_1)
            && (0.0..1.0).contains(&beta_2)
            && epsilon.is_finite()
            && epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(
                "optimizer needs learning_rate > 0, betas in [0, 1) and epsilon > 0".into(),
            ))
        }
    }
}

/// Adaptive-moment optimizer state for one network. Moments are kept for
/// trainable tensors only; moving statistics are never touched.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: OptimizerConfig,
    pub iterations: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: OptimizerConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f32>> = params
            .tensors
            .iter()
            .map(|t| {
                if t.trainable() {
                    vec![0.0; t.data.len()]
                } else {
                    Vec::new()
                }
            })
            .collect();
        Adam {
            config,
            iterations: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// `theta -= lr_t * m / (sqrt(v) + eps)` with the bias correction folded
    /// into `lr_t = lr * sqrt(1 - b2^t) / (1 - b1^t)`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads) {
        let OptimizerConfig::Adam {
            learning_rate,
            beta_1,
            beta_2,
            epsilon,
        } = self.config;
        self.iterations += 1;
        let t = self.iterations as i32;
        let lr_t = learning_rate * (1.0 - beta_2.powi(t)).sqrt() / (1.0 - beta_1.powi(t));
        for (i, tensor) in params.tensors.iter_mut().enumerate() {
            if !tensor.trainable() {
                continue;
            }
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads.0[i]);
            for j in 0..tensor.data.len() {
                m[j] = beta_1 * m[j] + (1.0 - beta_1) * g[j];
                v[j] = beta_2 * v[j] + (1.0 - beta_2) * g[j] * g[j];
                tensor.data[j] -= lr_t * m[j] / (v[j].sqrt() + epsilon);
            }
        }
    }
}
