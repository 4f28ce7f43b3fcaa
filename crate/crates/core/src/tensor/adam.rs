use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::nn::Params;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Settings used for adversarial training.
    pub fn gan() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }

    /// Settings used for the variational autoencoder and the predictors.
    pub fn standard(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; moment buffers mirror a [`Params`] set.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &Params) -> Self {
        let zeros: Vec<Matrix> = params
            .values()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Adam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` belongs to parameter `i`; `None` means zero.
    pub fn step(&mut self, params: &mut Params, grads: &[Option<Matrix>]) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::Shape("adam: parameter count changed".into()));
        }
        for g in grads.iter().flatten() {
            if !g.is_finite() {
                return Err(Error::NonFinite("adam gradient".into()));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = params.value_mut(i);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            match g {
                Some(g) => {
                    if g.shape() != p.shape() {
                        return Err(Error::Shape(format!(
                            "adam: gradient {:?} for parameter {:?}",
                            g.shape(),
                            p.shape()
                        )));
                    }
                    for (((pv, mv), vv), gv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                        .zip(g.data())
                    {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *pv -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
                None => {
                    // Zero gradient still decays the moments.
                    for ((pv, mv), vv) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()) {
                        *mv *= beta1;
                        *vv *= beta2;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *pv -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
