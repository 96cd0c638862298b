//! Focal and cross-entropy losses plus sum-squared error.
//!
//! Probability inputs are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before
//! taking logs. The logit-space variants report the same clamped loss but
//! return the gradient of the unclamped expression, so saturated wrong
//! predictions still receive a signal.

use super::activation::{log_sigmoid, log_softmax, sigmoid};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;
pub const DEFAULT_GAMMA: f64 = 2.0;

#[inline]
fn clamp_prob(y: f64) -> f64 {
    y.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `(1 - y)^g`, with the convention `0^0 = 1`.
#[inline]
fn powg(base: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else {
        base.max(0.0).powf(gamma)
    }
}

/// Focal loss on a sigmoid probability `y` against a binary target, and
/// `dL/dy`.
pub fn focal_sigmoid(y: f64, target: bool, gamma: f64) -> (f64, f64) {
    let y = clamp_prob(y);
    if target {
        let loss = -powg(1.0 - y, gamma) * y.ln();
        let mut grad = -powg(1.0 - y, gamma) / y;
        if gamma != 0.0 {
            grad += gamma * (1.0 - y).powf(gamma - 1.0) * y.ln();
        }
        (loss, grad)
    } else {
        let loss = -powg(y, gamma) * (1.0 - y).ln();
        let mut grad = powg(y, gamma) / (1.0 - y);
        if gamma != 0.0 {
            grad -= gamma * y.powf(gamma - 1.0) * (1.0 - y).ln();
        }
        (loss, grad)
    }
}

/// Focal sigmoid loss taking the logit `t`; returns `(loss, dL/dt)`.
pub fn focal_sigmoid_logit(t: f64, target: bool, gamma: f64) -> (f64, f64) {
    let y = sigmoid(t);
    let q = 1.0 - y;
    if target {
        let log_y = log_sigmoid(t).max(PROB_CLAMP.ln());
        let loss = -powg(q, gamma) * log_y;
        // d/dt = gamma * y * q^gamma * ln y - q^(gamma + 1)
        let grad = gamma * y * powg(q, gamma) * log_sigmoid(t) - powg(q, gamma) * q;
        (loss, grad)
    } else {
        let log_q = log_sigmoid(-t).max(PROB_CLAMP.ln());
        let loss = -powg(y, gamma) * log_q;
        // d/dt = -gamma * q * y^gamma * ln q + y^(gamma + 1)
        let grad = -gamma * q * powg(y, gamma) * log_sigmoid(-t) + powg(y, gamma) * y;
        (loss, grad)
    }
}

/// Focal loss on a softmax distribution `probs` for true class `target`,
/// and `dL/dp_target` (the other components have zero gradient).
pub fn focal_softmax(probs: &[f64], target: usize, gamma: f64) -> (f64, f64) {
    focal_sigmoid(probs[target], true, gamma)
}

/// Focal softmax loss on raw logits; returns `(loss, dL/dlogits)`.
pub fn focal_softmax_logits(logits: &[f64], target: usize, gamma: f64) -> (f64, Vec<f64>) {
    let logp = log_softmax(logits);
    let pt = logp[target].exp();
    let q = 1.0 - pt;
    let loss = -powg(q, gamma) * logp[target].max(PROB_CLAMP.ln());
    // g = dL/dp_t * p_t
    let mut g = -powg(q, gamma);
    if gamma != 0.0 && q > 0.0 {
        g += gamma * pt * q.powf(gamma - 1.0) * logp[target];
    }
    let grad = logp
        .iter()
        .enumerate()
        .map(|(j, &lp)| {
            let pj = lp.exp();
            let delta = if j == target { 1.0 } else { 0.0 };
            g * (delta - pj)
        })
        .collect();
    (loss, grad)
}

/// Plain binary cross entropy.
pub fn binary_cross_entropy(y: f64, target: bool) -> f64 {
    let y = clamp_prob(y);
    if target {
        -y.ln()
    } else {
        -(1.0 - y).ln()
    }
}

/// Plain softmax cross entropy given probabilities.
pub fn softmax_cross_entropy(probs: &[f64], target: usize) -> f64 {
    -clamp_prob(probs[target]).ln()
}

/// `sum((pred - target)^2)` and its gradient `2 (pred - target)`.
pub fn sum_squared<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "sum_squared",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    let two = T::of(2.0);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        loss += d * d;
        *g = two * d;
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::activation::softmax;

    #[test]
    fn focal_sigmoid_fixtures() {
        let (l, _) = focal_sigmoid(0.9, true, 2.0);
        assert!((l - 0.01 * -(0.9f64.ln())).abs() < 1e-15);
        assert!((l - 1.0536e-3).abs() < 1e-7);
        let (l, _) = focal_sigmoid(0.2, false, 2.0);
        assert!((l - 8.9257e-3).abs() < 1e-7);
    }

    #[test]
    fn focal_softmax_fixtures() {
        assert!(focal_softmax(&[0.0, 1.0], 1, 2.0).0 < 1e-20);
        let (l, _) = focal_softmax(&[0.25, 0.5, 0.25], 1, 2.0);
        assert!((l - 0.25 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 0.17329).abs() < 1e-5);
    }

    #[test]
    fn gamma_zero_is_cross_entropy() {
        for &y in &[0.01, 0.3, 0.5, 0.77, 0.999] {
            for t in [true, false] {
                assert!((focal_sigmoid(y, t, 0.0).0 - binary_cross_entropy(y, t)).abs() < 1e-12);
            }
        }
        let p = softmax(&[0.2, -1.0, 2.5]);
        for t in 0..3 {
            assert!((focal_softmax(&p, t, 0.0).0 - softmax_cross_entropy(&p, t)).abs() < 1e-12);
        }
    }

    #[test]
    fn logit_variants_agree_with_probability_variants() {
        for &t in &[-4.0, -0.3, 0.0, 1.1, 5.0] {
            for target in [true, false] {
                let y = sigmoid(t);
                let (l1, g1) = focal_sigmoid(y, target, 2.0);
                let (l2, g2) = focal_sigmoid_logit(t, target, 2.0);
                assert!((l1 - l2).abs() < 1e-12);
                assert!((g1 * y * (1.0 - y) - g2).abs() < 1e-12);
            }
        }
        let z = [0.4, -1.3, 2.0, 0.0];
        let p = softmax(&z);
        let (l1, _) = focal_softmax(&p, 2, 2.0);
        let (l2, _) = focal_softmax_logits(&z, 2, 2.0);
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn saturated_wrong_prediction_still_has_gradient() {
        let (_, g) = focal_sigmoid_logit(-40.0, true, 2.0);
        assert!(g < -0.99);
        let (_, g) = focal_sigmoid_logit(40.0, false, 2.0);
        assert!(g > 0.99);
    }

    #[test]
    fn sum_squared_fixtures() {
        let p = Tensor::<f64>::from_vec(&[1], vec![1.0]).unwrap();
        let t = Tensor::<f64>::zeros(&[1]);
        assert_eq!(sum_squared(&p, &t).unwrap().0, 1.0);
        assert_eq!(sum_squared(&p, &p).unwrap().0, 0.0);
        assert!(sum_squared(&p, &Tensor::zeros(&[2])).is_err());
    }

    proptest::proptest! {
        #[test]
        fn focal_never_exceeds_cross_entropy(y in 0.0..1.0f64, gamma in 0.0..5.0f64, target: bool) {
            proptest::prop_assert!(focal_sigmoid(y, target, gamma).0 <= binary_cross_entropy(y, target) + 1e-15);
        }
    }
}
