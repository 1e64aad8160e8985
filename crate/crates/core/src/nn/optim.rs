//! AdamW with decoupled weight decay, a cosine learning-rate schedule, and
//! target-parameter (EMA) updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Real;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub total_steps: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            base_lr: 1e-4,
            weight_decay: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            total_steps: 50_000,
        }
    }
}

/// lr(step) = 0.5 * base * (1 + cos(pi * step / total)), annealing to 0.
pub fn cosine_lr(cfg: &OptimizerConfig, step: usize) -> f64 {
    let frac = (step as f64 / cfg.total_steps as f64).min(1.0);
    0.5 * cfg.base_lr * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// AdamW state over one flat parameter vector. Moments are kept in f64 so
/// the update math is identical across scalar widths.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    pub step: usize,
}

impl AdamW {
    pub fn new(cfg: OptimizerConfig, param_count: usize) -> Self {
        AdamW { cfg, m: vec![0.0; param_count], v: vec![0.0; param_count], step: 0 }
    }

    /// One decoupled-weight-decay Adam step on `params` given `grads`,
    /// using the cosine-annealed learning rate for the current step.
    pub fn update<T: Real>(&mut self, params: &mut [T], grads: &[T]) -> Result<f64> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dim(format!(
                "optimizer sized for {} params, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if self.step >= self.cfg.total_steps {
            return Err(Error::validation(format!(
                "optimizer stepped past total_steps = {}",
                self.cfg.total_steps
            )));
        }
        let lr = cosine_lr(&self.cfg, self.step);
        self.step += 1;
        let t = self.step as f64;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powf(t);
        let bc2 = 1.0 - b2.powf(t);
        for i in 0..params.len() {
            let g = grads[i].to_f64();
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let p = params[i].to_f64();
            let updated =
                p - lr * m_hat / (v_hat.sqrt() + self.cfg.eps) - lr * self.cfg.weight_decay * p;
            params[i] = T::from_f64(updated);
        }
        Ok(lr)
    }
}

/// theta_minus <- mu * theta_minus + (1 - mu) * theta, with no gradient flow
/// (target parameters live outside the differentiated graph entirely).
pub fn ema_update<T: Real>(target: &mut [T], params: &[T], mu: f64) -> Result<()> {
    if target.len() != params.len() {
        return Err(Error::dim("ema shape mismatch"));
    }
    if mu == 0.0 {
        target.copy_from_slice(params);
        return Ok(());
    }
    for (t, p) in target.iter_mut().zip(params) {
        *t = T::from_f64(mu * t.to_f64() + (1.0 - mu) * p.to_f64());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let cfg = OptimizerConfig { base_lr: 1e-4, total_steps: 1000, ..Default::default() };
        assert_eq!(cosine_lr(&cfg, 0), 1e-4);
        assert!(cosine_lr(&cfg, 1000).abs() < 1e-20);
        assert!((cosine_lr(&cfg, 500) - 5e-5).abs() < 1e-12);
    }

    #[test]
    fn adamw_moves_against_gradient() {
        let cfg = OptimizerConfig { base_lr: 0.1, weight_decay: 0.0, total_steps: 10, ..Default::default() };
        let mut opt = AdamW::new(cfg, 2);
        let mut p = vec![1.0f32, -1.0];
        opt.update(&mut p, &[1.0, -1.0]).unwrap();
        assert!(p[0] < 1.0);
        assert!(p[1] > -1.0);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        // zero gradient: parameters still shrink by lr * wd * p
        let cfg = OptimizerConfig {
            base_lr: 0.5,
            weight_decay: 0.1,
            total_steps: 100,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, 1);
        let mut p = vec![2.0f64];
        opt.update(&mut p, &[0.0]).unwrap();
        assert!((p[0] - (2.0 - 0.5 * 0.1 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn ema_mu_zero_copies_exactly() {
        let mut target = vec![0.0f32; 4];
        let params = vec![1.0, -2.0, 3.0, 0.5];
        ema_update(&mut target, &params, 0.0).unwrap();
        assert_eq!(target, params);
    }

    #[test]
    fn ema_mu_one_freezes_target() {
        let mut target = vec![7.0f32, 8.0];
        ema_update(&mut target, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(target, vec![7.0, 8.0]);
    }

    #[test]
    fn ema_half_mixes() {
        let mut target = vec![0.0f64];
        ema_update(&mut target, &[2.0], 0.5).unwrap();
        assert_eq!(target, vec![1.0]);
    }
}
