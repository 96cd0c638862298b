use super::param::{join, Module, Param, Slot};
use super::tensor::{gemm, Scalar, Tensor};
use crate::error::{Error, Result};

/// Square-kernel 2-D cross-correlation with "same" padding (`k / 2`), so the
/// output spatial size is `ceil(in / stride)`.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar = f32> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    cache: Option<ConvCache<T>>,
}

#[derive(Debug, Clone)]
struct ConvCache<T: Scalar> {
    input_shape: (usize, usize, usize, usize),
    out_hw: (usize, usize),
    /// im2col matrices per image, `[cin * k * k, oh * ow]`; for pointwise
    /// stride-1 convs this is the input itself.
    cols: Vec<Vec<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, bias: bool) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        assert!(stride >= 1, "stride must be positive");
        Conv2d {
            weight: Param::new(Tensor::zeros(&[out_channels, in_channels, kernel, kernel]), true),
            bias: bias.then(|| Param::new(Tensor::zeros(&[out_channels]), false)),
            in_channels,
            out_channels,
            kernel,
            stride,
            cache: None,
        }
    }

    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        (
            (h + 2 * p - self.kernel) / self.stride + 1,
            (w + 2 * p - self.kernel) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    fn im2col(&self, img: &[T], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
        let k = self.kernel;
        let p = self.pad() as isize;
        let s = self.stride;
        let mut col = vec![T::zero(); c * k * k * oh * ow];
        for ci in 0..c {
            let plane = &img[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * oh * ow;
                    for oy in 0..oh {
                        let iy = (oy * s) as isize + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut col[row + oy * ow..row + (oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s) as isize + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[T], out: &mut [T], c: usize, h: usize, w: usize, oh: usize, ow: usize) {
        let k = self.kernel;
        let p = self.pad() as isize;
        let s = self.stride;
        for ci in 0..c {
            let plane = &mut out[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * oh * ow;
                    for oy in 0..oh {
                        let iy = (oy * s) as isize + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &col[row + oy * ow..row + (oy + 1) * ow];
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * s) as isize + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape().len() != 4 {
            return Err(Error::shape("conv2d", format!("expected NCHW input, got {:?}", x.shape())));
        }
        let (n, c, h, w) = x.dims4();
        if c != self.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c} channels, weights expect {}", self.in_channels),
            ));
        }
        if h == 0 || w == 0 {
            return Err(Error::shape("conv2d", format!("empty spatial dims {h}x{w}")));
        }
        let (oh, ow) = self.output_hw(h, w);
        let kk = c * self.kernel * self.kernel;
        let co = self.out_channels;
        let mut out = Tensor::zeros(&[n, co, oh, ow]);
        let mut cols = Vec::with_capacity(n);
        for i in 0..n {
            let img = &x.data()[i * c * h * w..(i + 1) * c * h * w];
            let col = if self.is_pointwise() {
                img.to_vec()
            } else {
                self.im2col(img, c, h, w, oh, ow)
            };
            let dst = &mut out.data_mut()[i * co * oh * ow..(i + 1) * co * oh * ow];
            gemm(co, kk, oh * ow, T::one(), self.weight.value.data(), false, &col, false, T::zero(), dst);
            if let Some(b) = &self.bias {
                for (o, &bv) in b.value.data().iter().enumerate() {
                    dst[o * oh * ow..(o + 1) * oh * ow].iter_mut().for_each(|v| *v += bv);
                }
            }
            cols.push(col);
        }
        self.cache = Some(ConvCache {
            input_shape: (n, c, h, w),
            out_hw: (oh, ow),
            cols,
        });
        Ok(out)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::invalid("conv2d backward without forward"))?;
        let (n, c, h, w) = cache.input_shape;
        let (oh, ow) = cache.out_hw;
        let co = self.out_channels;
        if dy.shape() != [n, co, oh, ow] {
            return Err(Error::shape(
                "conv2d backward",
                format!("gradient {:?} vs output {:?}", dy.shape(), [n, co, oh, ow]),
            ));
        }
        let kk = c * self.kernel * self.kernel;
        let hw = oh * ow;
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        let mut dcol = vec![T::zero(); kk * hw];
        for i in 0..n {
            let g = &dy.data()[i * co * hw..(i + 1) * co * hw];
            let col = &cache.cols[i];
            gemm(co, hw, kk, T::one(), g, false, col, true, T::one(), self.weight.grad.data_mut());
            if let Some(b) = &mut self.bias {
                for (o, gb) in b.grad.data_mut().iter_mut().enumerate() {
                    *gb += g[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
                }
            }
            let dimg = &mut dx.data_mut()[i * c * h * w..(i + 1) * c * h * w];
            if self.is_pointwise() {
                gemm(kk, co, hw, T::one(), self.weight.value.data(), true, g, false, T::zero(), dimg);
            } else {
                gemm(kk, co, hw, T::one(), self.weight.value.data(), true, g, false, T::zero(), &mut dcol);
                self.col2im(&dcol, dimg, c, h, w, oh, ow);
            }
        }
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn cast<U: Scalar>(&self) -> Conv2d<U> {
        Conv2d {
            weight: self.weight.cast(),
            bias: self.bias.as_ref().map(Param::cast),
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            cache: None,
        }
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), Slot::Param(b));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution, independent of im2col.
    fn direct(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = conv.output_hw(h, w);
        let k = conv.kernel;
        let p = conv.pad() as isize;
        let mut out = Tensor::zeros(&[n, conv.out_channels, oh, ow]);
        let wt = conv.weight.value.data();
        for i in 0..n {
            for o in 0..conv.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |b| b.value.data()[o]);
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * conv.stride) as isize + ky as isize - p;
                                    let ix = (ox * conv.stride) as isize + kx as isize - p;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += wt[((o * c + ci) * k + ky) * k + kx]
                                            * x.data()[((i * c + ci) * h + iy as usize) * w + ix as usize];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((i * conv.out_channels + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn filled(shape: &[usize], seed: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f64 + seed) * 0.731).sin()).collect()).unwrap()
    }

    #[test]
    fn matches_direct_convolution() {
        for (k, s, hw) in [(3, 1, 5), (3, 2, 7), (3, 2, 6), (1, 1, 4), (1, 2, 5)] {
            let mut conv = Conv2d::<f64>::new(3, 4, k, s, true);
            conv.weight.value = filled(&[4, 3, k, k], 1.0);
            conv.bias.as_mut().unwrap().value = filled(&[4], 2.0);
            let x = filled(&[2, 3, hw, hw], 3.0);
            let y = conv.forward(&x).unwrap();
            assert_eq!(y.shape()[2], hw.div_ceil(s));
            let want = direct(&conv, &x);
            for (a, b) in y.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pointwise_identity() {
        let mut conv = Conv2d::<f32>::new(3, 3, 1, 1, false);
        for i in 0..3 {
            conv.weight.value.data_mut()[i * 3 + i] = 1.0;
        }
        let x = filled(&[1, 3, 4, 4], 0.0).cast::<f32>();
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn all_ones_kernel_on_constant_input() {
        let mut conv = Conv2d::<f32>::new(1, 1, 3, 1, false);
        conv.weight.value.fill(1.0);
        let x = Tensor::full(&[1, 1, 5, 5], 2.5);
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.data()[2 * 5 + 2], 22.5);
        // corner sees only a 2x2 neighbourhood
        assert_eq!(y.data()[0], 10.0);
    }

    #[test]
    fn channel_mismatch_names_dims() {
        let mut conv = Conv2d::<f32>::new(3, 2, 3, 1, false);
        let err = conv.forward(&Tensor::zeros(&[1, 4, 5, 5])).unwrap_err().to_string();
        assert!(err.contains("4 channels") && err.contains('3'), "{err}");
    }
}
