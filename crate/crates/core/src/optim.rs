//! Adaptive-moment optimizer over a contiguous range of the flat parameters.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for the parameters in `range`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub range: Range<usize>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, range: Range<usize>) -> Self {
        let n = range.len();
        Self {
            config,
            range,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// One bias-corrected update of `params[range]` from `grad[range]`.
    /// Entries outside the range are never touched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != grad.len() || self.range.end > params.len() {
            return Err(Error::ShapeMismatch {
                what: "optimizer buffers",
                expected: params.len(),
                actual: grad.len(),
            });
        }
        let g = &grad[self.range.clone()];
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        let p = &mut params[self.range.clone()];
        for i in 0..g.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            p[i] -= lr * m_hat / (math::sqrt(v_hat) + eps);
        }
        Ok(())
    }
}

/// `lr · decay^(iteration / total)`; `decay = 0.1` ends the stage at a tenth.
pub fn exponential_lr(lr: f64, decay: f64, iteration: u64, total: u64) -> f64 {
    if total == 0 {
        return lr;
    }
    lr * libm::pow(decay, iteration as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![1.0, 2.0, 3.0];
        let g = vec![0.5, -4.0, 9.0];
        let mut adam = Adam::new(AdamConfig::default(), 0..2);
        adam.step(&mut p, &g, 0.1).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 2.1).abs() < 1e-6);
        assert_eq!(p[2], 3.0);
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(exponential_lr(5e-4, 0.1, 0, 100), 5e-4);
        assert!((exponential_lr(5e-4, 0.1, 100, 100) - 5e-5).abs() < 1e-18);
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut p = vec![0.0];
        let mut adam = Adam::new(AdamConfig::default(), 0..1);
        assert!(adam.step(&mut p, &[f64::NAN], 0.1).is_err());
        assert_eq!(adam.step, 0);
    }
}
