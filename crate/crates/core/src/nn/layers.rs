use super::activation::{LeakyRelu, LEAKY_SLOPE};
use super::conv::Conv2d;
use super::norm::{NormMode, NormState, Phase};
use super::param::{join, Module, Slot};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// conv (no bias) -> norm -> leaky ReLU.
#[derive(Debug, Clone)]
pub struct ConvBlock<T: Scalar = f32> {
    pub conv: Conv2d<T>,
    pub norm: NormState<T>,
    act: LeakyRelu,
}

impl<T: Scalar> ConvBlock<T> {
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, mode: NormMode) -> Self {
        ConvBlock {
            conv: Conv2d::new(cin, cout, kernel, stride, false),
            norm: NormState::new(cout, mode),
            act: LeakyRelu::new(LEAKY_SLOPE),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, phase: Phase) -> Result<Tensor<T>> {
        let y = self.conv.forward(x)?;
        let y = self.norm.forward(&y, phase)?;
        Ok(self.act.forward(&y))
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.act.backward(dy);
        let g = self.norm.backward(&g)?;
        self.conv.backward(&g)
    }

    pub fn clear_cache(&mut self) {
        self.conv.clear_cache();
        self.norm.clear_cache();
        self.act.clear_cache();
    }

    pub fn cast<U: Scalar>(&self) -> ConvBlock<U> {
        ConvBlock {
            conv: self.conv.cast(),
            norm: self.norm.cast(),
            act: LeakyRelu::new(self.act.slope),
        }
    }
}

impl<T: Scalar> Module<T> for ConvBlock<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }
}

/// `x + block(x)` with block = 1x1 to half width, then 3x3 back.
#[derive(Debug, Clone)]
pub struct ResidualUnit<T: Scalar = f32> {
    pub reduce: ConvBlock<T>,
    pub expand: ConvBlock<T>,
}

impl<T: Scalar> ResidualUnit<T> {
    pub fn new(channels: usize, mode: NormMode) -> Self {
        let mid = (channels / 2).max(1);
        ResidualUnit {
            reduce: ConvBlock::new(channels, mid, 1, 1, mode),
            expand: ConvBlock::new(mid, channels, 3, 1, mode),
        }
    }

    pub fn channels(&self) -> usize {
        self.reduce.conv.in_channels
    }

    pub fn forward(&mut self, x: &Tensor<T>, phase: Phase) -> Result<Tensor<T>> {
        if x.shape().len() != 4 || x.shape()[1] != self.channels() {
            return Err(Error::shape(
                "residual_unit",
                format!("input {:?} but unit has {} channels", x.shape(), self.channels()),
            ));
        }
        let h = self.reduce.forward(x, phase)?;
        let mut y = self.expand.forward(&h, phase)?;
        y.add_assign(x);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.expand.backward(dy)?;
        let mut dx = self.reduce.backward(&g)?;
        dx.add_assign(dy);
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.reduce.clear_cache();
        self.expand.clear_cache();
    }

    pub fn cast<U: Scalar>(&self) -> ResidualUnit<U> {
        ResidualUnit {
            reduce: self.reduce.cast(),
            expand: self.expand.cast(),
        }
    }
}

impl<T: Scalar> Module<T> for ResidualUnit<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.reduce.visit(&join(prefix, "reduce"), f);
        self.expand.visit(&join(prefix, "expand"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_identity() {
        let mut unit = ResidualUnit::<f64>::new(4, NormMode::BatchNorm);
        unit.reduce.norm.gamma.value.fill(3.7);
        unit.expand.norm.gamma.value.fill(-1.2);
        let x = Tensor::from_vec(&[2, 4, 3, 3], (0..72).map(|i| (i as f64 * 0.37).cos()).collect()).unwrap();
        let y = unit.forward(&x, Phase::Train).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let mut unit = ResidualUnit::<f32>::new(4, NormMode::BatchNorm);
        assert!(unit.forward(&Tensor::zeros(&[1, 3, 4, 4]), Phase::Infer).is_err());
    }

    #[test]
    fn names_are_dotted() {
        let mut unit = ResidualUnit::<f32>::new(4, NormMode::BatchNorm);
        let mut names = Vec::new();
        unit.visit("stage1.0", &mut |n, _| names.push(n.to_string()));
        assert_eq!(names[0], "stage1.0.reduce.conv.weight");
        assert!(names.contains(&"stage1.0.expand.norm.moving_var".to_string()));
    }
}
