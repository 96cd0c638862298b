use super::tensor::{Scalar, Tensor};

pub const LEAKY_SLOPE: f64 = 0.1;

#[inline]
pub fn leaky_relu<T: Scalar>(x: T, slope: T) -> T {
    if x > T::zero() {
        x
    } else {
        x * slope
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable `ln(sigmoid(x))`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `ln(softmax(logits)[i])` for every `i`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Elementwise leaky ReLU layer that remembers its input sign pattern.
#[derive(Debug, Clone, Default)]
pub struct LeakyRelu {
    pub slope: f64,
    mask: Option<Vec<bool>>,
}

impl LeakyRelu {
    pub fn new(slope: f64) -> Self {
        LeakyRelu { slope, mask: None }
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let s = T::of(self.slope);
        self.mask = Some(x.data().iter().map(|&v| v > T::zero()).collect());
        x.map(|v| leaky_relu(v, s))
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let mask = self.mask.take().expect("leaky relu backward without forward");
        let s = T::of(self.slope);
        let mut dx = dy.clone();
        for (g, &pos) in dx.data_mut().iter_mut().zip(&mask) {
            if !pos {
                *g *= s;
            }
        }
        dx
    }

    pub fn clear_cache(&mut self) {
        self.mask = None;
    }
}
