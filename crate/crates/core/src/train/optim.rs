use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid AdamW settings {self:?}")));
        }
        Ok(())
    }
}

/// AdamW with decoupled weight decay: `p *= 1 - lr * wd`, then the
/// bias-corrected Adam step. Moments are kept per parameter and only touched
/// for trainable parameters.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        let zeros = || params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect::<Vec<_>>();
        Ok(Self { cfg, step: 0, m: zeros(), v: zeros() })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients stored on each parameter. A
    /// non-finite gradient aborts before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Contract("optimizer state does not match parameter store".into()));
        }
        for p in params.iter().filter(|p| p.trainable) {
            if let Some(g) = p.tensor.grad() {
                if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                    return Err(Error::numeric("adamw", format!("non-finite gradient in {} at element {i}", p.name)));
                }
            }
        }
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (idx, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let grad = p.tensor.grad().map(<[f64]>::to_vec);
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            let data = p.tensor.data_mut();
            for j in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[j]);
                data[j] *= 1.0 - c.lr * c.weight_decay;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
