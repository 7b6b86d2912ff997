//! Adam with bias correction. Moments are kept in `f64`; parameters stay `f32`.

use crate::error::{Result, TensorError};
use crate::param::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update using the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.is_empty() {
            for (_, p) in store.iter() {
                self.m.push(vec![0.0; p.value().len()]);
                self.v.push(vec![0.0; p.value().len()]);
            }
        }
        if self.m.len() != store.len() {
            return Err(TensorError::shape("adam_step", &[self.m.len()], &[store.len()]));
        }
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            if self.m[i].len() != p.value().len() || p.grad().len() != p.value().len() {
                return Err(TensorError::shape("adam_step", p.value().shape(), p.grad().shape()));
            }
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);

        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let grad = p.grad().data().to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, theta) in p.value_mut().data_mut().iter_mut().enumerate() {
                let g = grad[j] as f64;
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *theta = (*theta as f64 - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
            }
            if p.value().data().iter().any(|x| !x.is_finite()) {
                return Err(TensorError::domain("adam_step", format!("{} diverged", p.name())));
            }
        }
        Ok(())
    }
}
