use serde::{Deserialize, Serialize};

use super::param::{Module, Param, Slot};
use super::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Adam with coupled L2 decay: `g += wd * w` before the moment update, for
/// params flagged `decay`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0 }
    }

    /// Forget the step counter; moments live in the params and must be reset
    /// there.
    pub fn reset(&mut self) {
        self.step = 0;
    }

    pub fn step_param<T: Scalar>(&self, p: &mut Param<T>, lr: f64) {
        let c = &self.config;
        let t = self.step.max(1) as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let wd = if p.decay { T::of(c.weight_decay) } else { T::zero() };
        let value = p.value.data_mut();
        let grad = p.grad.data();
        let m = p.m.data_mut();
        let v = p.v.data_mut();
        for i in 0..value.len() {
            let g = grad[i] + wd * value[i];
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let m_hat = m[i].f64() / bc1;
            let v_hat = v[i].f64() / bc2;
            value[i] -= T::of(lr * m_hat / (v_hat.sqrt() + c.eps));
        }
    }

    /// One update over every param of `module`.
    pub fn step<T: Scalar, M: Module<T> + ?Sized>(&mut self, module: &mut M, lr: f64) {
        self.step += 1;
        module.visit("", &mut |_, slot| {
            if let Slot::Param(p) = slot {
                self.step_param(p, lr);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;

    fn run(value: Vec<f64>, grad: Vec<f64>, decay: bool, wd: f64) -> Vec<f64> {
        let n = value.len();
        let mut p = Param::new(Tensor::from_vec(&[n], value).unwrap(), decay);
        p.grad = Tensor::from_vec(&[n], grad).unwrap();
        let adam = Adam {
            config: AdamConfig { weight_decay: wd, ..AdamConfig::default() },
            step: 1,
        };
        adam.step_param(&mut p, 1e-3);
        p.value.into_data()
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        assert_eq!(run(vec![0.5, -2.0], vec![0.0, 0.0], true, 0.0), vec![0.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let out = run(vec![0.0, 0.0, 1.0], vec![3.0, -0.02, 1e-3], false, 0.0);
        for (o, want) in out.iter().zip([-1e-3, 1e-3, 1.0 - 1e-3]) {
            assert!((o - want).abs() < 1e-8, "{o} vs {want}");
        }
    }

    #[test]
    fn coupled_decay_alone_shrinks_weights() {
        let out = run(vec![2.0, -3.0], vec![0.0, 0.0], true, 1e-4);
        assert!((out[0] - (2.0 - 1e-3)).abs() < 1e-6);
        assert!((out[1] - (-3.0 + 1e-3)).abs() < 1e-6);
        // params excluded from decay stay put
        assert_eq!(run(vec![2.0], vec![0.0], false, 1e-4), vec![2.0]);
    }
}
