//! Adam with bias correction and coupled L2 weight decay.

use crate::error::{Error, Result};
use crate::tensor::{ParamBlock, Scalar, Tensor2D};
use serde::{Deserialize, Serialize};

/// Optimizer hyper-parameters. Defaults follow the probe training recipe:
/// learning rate and weight decay 5e-4, betas 0.9/0.999, epsilon 1e-8.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-block first/second moment accumulators plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub t: u64,
    names: Vec<String>,
    m: Vec<Tensor2D<F>>,
    u: Vec<Tensor2D<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(blocks: &[&ParamBlock<F>], config: AdamConfig) -> Self {
        let names = blocks.iter().map(|b| b.name.clone()).collect();
        let m = blocks
            .iter()
            .map(|b| Tensor2D::zeros(b.value.rows(), b.value.cols()))
            .collect();
        let u = blocks
            .iter()
            .map(|b| Tensor2D::zeros(b.value.rows(), b.value.cols()))
            .collect();
        AdamState {
            config,
            t: 0,
            names,
            m,
            u,
        }
    }

    /// Applies one bias-corrected update to every block.
    ///
    /// Weight decay is coupled L2: the decay term is added to the gradient
    /// before the moment updates. Any non-finite gradient aborts the step
    /// before any parameter or accumulator is touched.
    pub fn step(&mut self, blocks: &mut [&mut ParamBlock<F>]) -> Result<()> {
        if blocks.len() != self.names.len() {
            return Err(Error::Usage(format!(
                "adam state tracks {} blocks, got {}",
                self.names.len(),
                blocks.len()
            )));
        }
        for (block, name) in blocks.iter().zip(&self.names) {
            if block.name != *name {
                return Err(Error::Usage(format!(
                    "adam state expected block '{name}', got '{}'",
                    block.name
                )));
            }
            block
                .grad
                .ensure_finite(&format!("gradient of {}", block.name))?;
        }

        self.t += 1;
        let cfg = self.config;
        let lr = F::from_f64(cfg.lr);
        let wd = F::from_f64(cfg.weight_decay);
        let b1 = F::from_f64(cfg.beta1);
        let b2 = F::from_f64(cfg.beta2);
        let eps = F::from_f64(cfg.eps);
        let one = F::one();
        let bias1 = one - F::from_f64(cfg.beta1.powi(self.t as i32));
        let bias2 = one - F::from_f64(cfg.beta2.powi(self.t as i32));

        for (idx, block) in blocks.iter_mut().enumerate() {
            let m = self.m[idx].as_mut_slice();
            let u = self.u[idx].as_mut_slice();
            let value = block.value.as_mut_slice();
            let grad = block.grad.as_slice();
            for i in 0..value.len() {
                let g = grad[i] + wd * value[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                u[i] = b2 * u[i] + (one - b2) * g * g;
                let m_hat = m[i] / bias1;
                let u_hat = u[i] / bias2;
                value[i] = value[i] - lr * m_hat / (u_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_block(name: &str, value: f64) -> ParamBlock<f64> {
        ParamBlock::new(name, Tensor2D::from_vec(1, 1, vec![value]).unwrap())
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut block = scalar_block("w", 0.7);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&[&block], cfg);
        for _ in 0..3 {
            state.step(&mut [&mut block]).unwrap();
        }
        assert_eq!(block.value.get(0, 0), 0.7);
        assert_eq!(state.t, 3);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient_sign() {
        // Bias correction makes m_hat / sqrt(u_hat) = g / |g| on step one, so
        // the update is -lr * g / (|g| + eps) regardless of the magnitude.
        for &g in &[2.5, -0.3, 1e-3] {
            let mut block = scalar_block("w", 1.0);
            block.grad.set(0, 0, g);
            let cfg = AdamConfig {
                lr: 0.05,
                weight_decay: 0.0,
                ..AdamConfig::default()
            };
            let mut state = AdamState::new(&[&block], cfg);
            state.step(&mut [&mut block]).unwrap();
            let delta = block.value.get(0, 0) - 1.0;
            let want = -cfg.lr * g / (g.abs() + cfg.eps);
            assert_relative_eq!(delta, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn trajectory_matches_scalar_recurrence() {
        // Hand-rolled Adam recurrence on a single scalar with a fixed gradient.
        let cfg = AdamConfig {
            lr: 0.01,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let g0 = 0.37;
        let mut w_ref = 2.0f64;
        let mut m = 0.0f64;
        let mut u = 0.0f64;
        let mut expected = Vec::new();
        for t in 1..=3 {
            let g = g0 + cfg.weight_decay * w_ref;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            u = cfg.beta2 * u + (1.0 - cfg.beta2) * g * g;
            let m_hat = m / (1.0 - cfg.beta1.powi(t));
            let u_hat = u / (1.0 - cfg.beta2.powi(t));
            w_ref -= cfg.lr * m_hat / (u_hat.sqrt() + cfg.eps);
            expected.push(w_ref);
        }

        let mut block = scalar_block("w", 2.0);
        let mut state = AdamState::new(&[&block], cfg);
        for want in expected {
            block.grad.set(0, 0, g0);
            state.step(&mut [&mut block]).unwrap();
            assert_relative_eq!(block.value.get(0, 0), want, epsilon = 1e-10);
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let mut a = scalar_block("a", 1.0);
        let mut b = scalar_block("b", 2.0);
        a.grad.set(0, 0, 0.5);
        b.grad.set(0, 0, f64::NAN);
        let mut state = AdamState::new(&[&a, &b], AdamConfig::default());
        let err = state.step(&mut [&mut a, &mut b]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(a.value.get(0, 0), 1.0);
        assert_eq!(b.value.get(0, 0), 2.0);
        assert_eq!(state.t, 0);
    }

    #[test]
    fn mismatched_block_names_are_rejected() {
        let a = scalar_block("a", 1.0);
        let mut state = AdamState::new(&[&a], AdamConfig::default());
        let mut wrong = scalar_block("z", 1.0);
        assert!(matches!(
            state.step(&mut [&mut wrong]),
            Err(Error::Usage(_))
        ));
    }
}
