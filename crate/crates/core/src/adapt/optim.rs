use super::AdaptConfig;
use crate::error::{Error, Result};
use crate::model::ModelWeights;
use crate::tensor::DiffTensor;

/// Adaptive-moment gradient descent with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(w: &ModelWeights, cfg: &AdaptConfig) -> Self {
        let zeros: Vec<Vec<f64>> = w.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// Returns the updated weights; `self` keeps the moment estimates.
    pub fn step(&mut self, w: &ModelWeights, grads: &[Vec<f64>]) -> Result<ModelWeights> {
        if grads.len() != self.m.len() {
            return Err(Error::contract("gradient list does not match the parameters"));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let params = w
            .params()
            .iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|((p, g), (m, v))| {
                let values = p
                    .values()
                    .iter()
                    .zip(g)
                    .zip(m.iter_mut().zip(v.iter_mut()))
                    .map(|((&x, &gi), (mi, vi))| {
                        *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                        *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                        x - self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps)
                    })
                    .collect();
                DiffTensor::new(p.shape(), values)
            })
            .collect::<Result<Vec<_>>>()?;
        ModelWeights::from_params(w.config.clone(), w.seed, params)
    }
}
