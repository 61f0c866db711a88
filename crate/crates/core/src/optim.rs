//! Adaptive moment estimation over a [`Tensors`] container.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::nets::{round_f32, Tensors};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
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

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First and second moment estimates, one pair per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new<T: Tensors>(params: &T) -> Self {
        let zeros: Vec<Array2<f64>> = params
            .tensors()
            .iter()
            .map(|(_, t)| Array2::zeros(t.raw_dim()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.m.iter().chain(&self.v).all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// One bias-corrected update at 1-based step `t`. Parameters and moments are
    /// rounded to `f32` afterwards so that checkpoints restore them exactly.
    pub fn step<T: Tensors>(&mut self, params: &mut T, grads: &T, t: u64, cfg: &AdamConfig) {
        let c1 = 1.0 - cfg.beta1.powf(t as f64);
        let c2 = 1.0 - cfg.beta2.powf(t as f64);
        let grads = grads.tensors();
        for (((p, (_, g)), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                let m_new = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                let v_new = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let update = cfg.learning_rate * (m_new / c1) / ((v_new / c2).sqrt() + cfg.epsilon);
                *p = round_f32(*p - update);
                *m = round_f32(m_new);
                *v = round_f32(v_new);
            });
        }
    }
}
