//! Batch normalization and batch renormalization over NCHW channels.
//!
//! Both modes share one code path: training output is
//! `gamma * (x_hat * r + d) + beta` with `x_hat` normalized by the batch
//! statistics. Plain batch norm uses `r = 1, d = 0`; renormalization clips
//! `r = sigma_B / sigma` and `d = (mu_B - mu) / sigma` against the moving
//! statistics and treats both as constants in the backward pass.

use serde::{Deserialize, Serialize};

use super::param::{join, Module, Param, Slot};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_MOMENTUM: f64 = 0.03;
pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_R_MAX: f64 = 1.5;
pub const DEFAULT_D_MAX: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NormMode {
    BatchNorm,
    BatchRenorm { r_max: f64, d_max: f64 },
}

impl NormMode {
    pub fn renorm() -> Self {
        NormMode::BatchRenorm {
            r_max: DEFAULT_R_MAX,
            d_max: DEFAULT_D_MAX,
        }
    }

    pub fn is_renorm(&self) -> bool {
        matches!(self, NormMode::BatchRenorm { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
pub struct NormState<T: Scalar = f32> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub moving_mean: Tensor<T>,
    pub moving_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
    pub mode: NormMode,
    /// When false, training-phase forwards leave the moving statistics alone.
    pub update_stats: bool,
    cache: Option<NormCache<T>>,
}

#[derive(Debug, Clone)]
struct NormCache<T: Scalar> {
    phase: Phase,
    shape: (usize, usize, usize, usize),
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    r: Vec<T>,
    d: Vec<T>,
}

/// Per-channel `(mean, biased variance)` of an NCHW tensor.
pub fn channel_stats<T: Scalar>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let m = T::of((n * hw) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for i in 0..n {
            let o = (i * c + ch) * hw;
            s += x.data()[o..o + hw].iter().copied().sum::<T>();
        }
        let mu = s / m;
        let mut v = T::zero();
        for i in 0..n {
            let o = (i * c + ch) * hw;
            for &xv in &x.data()[o..o + hw] {
                let dv = xv - mu;
                v += dv * dv;
            }
        }
        mean[ch] = mu;
        var[ch] = v / m;
    }
    (mean, var)
}

impl<T: Scalar> NormState<T> {
    pub fn new(channels: usize, mode: NormMode) -> Self {
        NormState {
            gamma: Param::new(Tensor::full(&[channels], T::one()), false),
            beta: Param::new(Tensor::zeros(&[channels]), false),
            moving_mean: Tensor::zeros(&[channels]),
            moving_var: Tensor::full(&[channels], T::one()),
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
            mode,
            update_stats: true,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    /// Clipped renormalization factors `(r, d)` for given batch statistics;
    /// `(1, 0)` in batch-norm mode.
    pub fn correction(&self, batch_mean: &[T], batch_var: &[T]) -> (Vec<T>, Vec<T>) {
        let c = self.channels();
        match self.mode {
            NormMode::BatchNorm => (vec![T::one(); c], vec![T::zero(); c]),
            NormMode::BatchRenorm { r_max, d_max } => {
                let eps = T::of(self.eps);
                let (r_max, d_max) = (T::of(r_max), T::of(d_max));
                let mut r = Vec::with_capacity(c);
                let mut d = Vec::with_capacity(c);
                for ch in 0..c {
                    let sigma = (self.moving_var.data()[ch] + eps).sqrt();
                    let sigma_b = (batch_var[ch] + eps).sqrt();
                    r.push((sigma_b / sigma).max(T::one() / r_max).min(r_max));
                    d.push(((batch_mean[ch] - self.moving_mean.data()[ch]) / sigma).max(-d_max).min(d_max));
                }
                (r, d)
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, phase: Phase) -> Result<Tensor<T>> {
        if x.shape().len() != 4 || x.shape()[1] != self.channels() {
            return Err(Error::shape(
                "norm",
                format!("input {:?} vs {} channels", x.shape(), self.channels()),
            ));
        }
        let (n, c, h, w) = x.dims4();
        let hw = h * w;
        let eps = T::of(self.eps);
        let (mean, inv_std, r, d) = match phase {
            Phase::Train => {
                let (mean, var) = channel_stats(x);
                let (r, d) = self.correction(&mean, &var);
                let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                if self.update_stats {
                    let m = T::of(self.momentum);
                    let keep = T::one() - m;
                    for ch in 0..c {
                        let mm = &mut self.moving_mean.data_mut()[ch];
                        *mm = keep * *mm + m * mean[ch];
                        let mv = &mut self.moving_var.data_mut()[ch];
                        *mv = keep * *mv + m * var[ch];
                    }
                }
                (mean, inv, r, d)
            }
            Phase::Infer => {
                let mean = self.moving_mean.data().to_vec();
                let inv = self
                    .moving_var
                    .data()
                    .iter()
                    .map(|&v| T::one() / (v + eps).sqrt())
                    .collect();
                (mean, inv, vec![T::one(); c], vec![T::zero(); c])
            }
        };
        let mut out = Tensor::zeros(x.shape());
        let mut x_hat = vec![T::zero(); x.len()];
        let g = self.gamma.value.data();
        let b = self.beta.value.data();
        for i in 0..n {
            for ch in 0..c {
                let o = (i * c + ch) * hw;
                for j in o..o + hw {
                    let xh = (x.data()[j] - mean[ch]) * inv_std[ch];
                    x_hat[j] = xh;
                    out.data_mut()[j] = g[ch] * (xh * r[ch] + d[ch]) + b[ch];
                }
            }
        }
        self.cache = Some(NormCache {
            phase,
            shape: (n, c, h, w),
            x_hat,
            inv_std,
            r,
            d,
        });
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::invalid("norm backward without forward"))?;
        let (n, c, h, w) = cache.shape;
        if dy.shape() != [n, c, h, w] {
            return Err(Error::shape("norm backward", format!("{:?}", dy.shape())));
        }
        let hw = h * w;
        let m = T::of((n * hw) as f64);
        let mut dx = Tensor::zeros(dy.shape());
        for ch in 0..c {
            let gamma = self.gamma.value.data()[ch];
            let (r, d) = (cache.r[ch], cache.d[ch]);
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for i in 0..n {
                let o = (i * c + ch) * hw;
                for j in o..o + hw {
                    sum_dy += dy.data()[j];
                    sum_dy_xhat += dy.data()[j] * cache.x_hat[j];
                }
            }
            self.gamma.grad.data_mut()[ch] += sum_dy_xhat * r + sum_dy * d;
            self.beta.grad.data_mut()[ch] += sum_dy;
            let scale = gamma * r * cache.inv_std[ch];
            match cache.phase {
                Phase::Infer => {
                    for i in 0..n {
                        let o = (i * c + ch) * hw;
                        for j in o..o + hw {
                            dx.data_mut()[j] = scale * dy.data()[j];
                        }
                    }
                }
                Phase::Train => {
                    // d(x_hat) = gamma * r * dy; the usual batch-norm input gradient.
                    let mean_dy = sum_dy / m;
                    let mean_dy_xhat = sum_dy_xhat / m;
                    for i in 0..n {
                        let o = (i * c + ch) * hw;
                        for j in o..o + hw {
                            dx.data_mut()[j] =
                                scale * (dy.data()[j] - mean_dy - cache.x_hat[j] * mean_dy_xhat);
                        }
                    }
                }
            }
        }
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn cast<U: Scalar>(&self) -> NormState<U> {
        NormState {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            moving_mean: self.moving_mean.cast(),
            moving_var: self.moving_var.cast(),
            momentum: self.momentum,
            eps: self.eps,
            mode: self.mode,
            update_stats: self.update_stats,
            cache: None,
        }
    }
}

impl<T: Scalar> Module<T> for NormState<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        f(&join(prefix, "gamma"), Slot::Param(&mut self.gamma));
        f(&join(prefix, "beta"), Slot::Param(&mut self.beta));
        f(&join(prefix, "moving_mean"), Slot::Buffer(&mut self.moving_mean));
        f(&join(prefix, "moving_var"), Slot::Buffer(&mut self.moving_var));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[values.len(), 1, 1, 1], values.to_vec()).unwrap()
    }

    #[test]
    fn batchnorm_one_two_three() {
        let mut bn = NormState::<f64>::new(1, NormMode::BatchNorm);
        bn.eps = 0.0;
        let y = bn.forward(&column(&[1.0, 2.0, 3.0]), Phase::Train).unwrap();
        let want = [-1.224744871391589, 0.0, 1.224744871391589];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        bn.gamma.value.fill(2.0);
        bn.beta.value.fill(1.0);
        let y2 = bn.forward(&column(&[1.0, 2.0, 3.0]), Phase::Train).unwrap();
        for (a, b) in y2.data().iter().zip(y.data()) {
            assert!((a - (2.0 * b + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn infer_with_unit_moving_stats_is_identity() {
        let mut bn = NormState::<f64>::new(2, NormMode::BatchNorm);
        bn.eps = 0.0;
        let x = Tensor::from_vec(&[1, 2, 1, 2], vec![0.5, -3.0, 7.0, 0.25]).unwrap();
        assert_eq!(bn.forward(&x, Phase::Infer).unwrap(), x);
    }

    #[test]
    fn moving_stats_update_with_momentum() {
        let mut bn = NormState::<f64>::new(1, NormMode::BatchNorm);
        bn.momentum = 0.5;
        bn.forward(&column(&[1.0, 2.0, 3.0]), Phase::Train).unwrap();
        assert!((bn.moving_mean.data()[0] - 1.0).abs() < 1e-15);
        assert!((bn.moving_var.data()[0] - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn renorm_clips_r() {
        let mut br = NormState::<f64>::new(1, NormMode::renorm());
        br.eps = 0.0;
        br.moving_var.fill(1.0);
        let (r, d) = br.correction(&[0.0], &[9.0]);
        assert_eq!(r, vec![1.5]);
        assert_eq!(d, vec![0.0]);
        let (r, d) = br.correction(&[-3.0], &[0.01]);
        assert_eq!(r, vec![1.0 / 1.5]);
        assert_eq!(d, vec![-0.5]);
    }

    #[test]
    fn renorm_equals_batchnorm_when_moving_matches_batch() {
        let x = Tensor::from_vec(&[2, 2, 2, 1], vec![0.3, -1.2, 2.2, 0.1, -0.7, 1.9, 0.4, 0.0]).unwrap();
        let (mean, var) = channel_stats(&x);
        let mut bn = NormState::<f64>::new(2, NormMode::BatchNorm);
        let mut br = NormState::<f64>::new(2, NormMode::renorm());
        for s in [&mut bn, &mut br] {
            s.moving_mean = Tensor::from_vec(&[2], mean.clone()).unwrap();
            s.moving_var = Tensor::from_vec(&[2], var.clone()).unwrap();
            s.gamma.value = Tensor::from_vec(&[2], vec![1.3, 0.7]).unwrap();
            s.beta.value = Tensor::from_vec(&[2], vec![-0.2, 0.5]).unwrap();
        }
        let (r, d) = br.correction(&mean, &var);
        assert_eq!((r, d), (vec![1.0; 2], vec![0.0; 2]));
        assert_eq!(bn.forward(&x, Phase::Train).unwrap(), br.forward(&x, Phase::Train).unwrap());
    }

    #[test]
    fn train_output_is_standardized() {
        let vals: Vec<f64> = (0..48).map(|i| ((i * 37 % 17) as f64).sqrt() * 1.7 - 2.0).collect();
        let x = Tensor::from_vec(&[3, 2, 4, 2], vals).unwrap();
        let mut bn = NormState::<f64>::new(2, NormMode::BatchNorm);
        bn.eps = 0.0;
        let y = bn.forward(&x, Phase::Train).unwrap();
        let (mean, var) = channel_stats(&y);
        for ch in 0..2 {
            assert!(mean[ch].abs() < 1e-5 && (var[ch] - 1.0).abs() < 1e-5);
        }
    }
}
