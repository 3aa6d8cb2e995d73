//! AdamW with a cosine learning-rate schedule and global-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Grads, Mat, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub clip_norm: f64,
    pub warmup_steps: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01, clip_norm: 1.0, warmup_steps: 0 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.clip_norm >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("optimizer settings out of range: {self:?}")))
        }
    }

    /// Learning rate at `step` (0-based) of `total` steps.
    pub fn lr_at(&self, step: u64, total: u64) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = total.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub cfg: OptimizerConfig,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
    pub t: u64,
}

impl AdamW {
    pub fn new(cfg: OptimizerConfig, params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, _, p)| Mat::zeros(p.rows(), p.cols())).collect::<Vec<_>>();
        Self { cfg, m: zeros(), v: zeros(), t: 0 }
    }

    /// Clips `grads` in place and returns the norm before clipping.
    pub fn clip(&self, grads: &mut Grads) -> f64 {
        let norm = grads.norm();
        if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            grads.scale(self.cfg.clip_norm / norm);
        }
        norm
    }

    /// One update with learning rate `lr`. Parameters without a gradient
    /// are left untouched, moments included. Weight decay skips vectors.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads, lr: f64) {
        self.t += 1;
        let OptimizerConfig { beta1, beta2, eps, weight_decay, .. } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let p = params.get_mut(id);
            let decay = if p.rows() > 1 { 1.0 - lr * weight_decay } else { 1.0 };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                *p = *p * decay - lr * update;
            }
        }
    }
}
