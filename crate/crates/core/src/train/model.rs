use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::LEVEL_STRIDES;
use crate::error::{Error, Result};
use crate::head::{GridPrediction, LevelGrid, ANCHORS_PER_LEVEL};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::ops::{concat_channels, split_channels, upsample2x, upsample2x_backward};
use crate::nn::param::join;
use crate::nn::{Conv2d, ConvBlock, Module, NormMode, Phase, ResidualUnit, Scalar, Slot, Tensor};

/// Channel widths and residual depths of the toy detector at width
/// multiplier 1.
pub const STEM_WIDTH: usize = 8;
/// Output width of each stride-2 stage (strides 2, 4, 8, 16, 32).
pub const STAGE_WIDTHS: [usize; 5] = [16, 32, 64, 64, 128];
/// Residual units after each stride-2 conv.
pub const STAGE_UNITS: [usize; 5] = [0, 1, 2, 2, 1];
/// Lateral widths of the neck at strides 8, 16, 32.
pub const NECK_WIDTHS: [usize; 3] = [32, 32, 64];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub width_multiplier: usize,
    pub norm: NormMode,
}

impl ModelConfig {
    pub fn new(num_classes: usize, width_multiplier: usize, norm: NormMode) -> Self {
        ModelConfig {
            num_classes,
            width_multiplier,
            norm,
        }
    }
}

#[derive(Debug, Clone)]
struct Stage<T: Scalar> {
    down: ConvBlock<T>,
    units: Vec<ResidualUnit<T>>,
}

impl<T: Scalar> Stage<T> {
    fn forward(&mut self, x: &Tensor<T>, phase: Phase) -> Result<Tensor<T>> {
        let mut y = self.down.forward(x, phase)?;
        for u in &mut self.units {
            y = u.forward(&y, phase)?;
        }
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = dy.clone();
        for u in self.units.iter_mut().rev() {
            g = u.backward(&g)?;
        }
        self.down.backward(&g)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.down.visit(&join(prefix, "down"), f);
        for (i, u) in self.units.iter_mut().enumerate() {
            u.visit(&join(prefix, &format!("unit{i}")), f);
        }
    }

    fn cast<U: Scalar>(&self) -> Stage<U> {
        Stage {
            down: self.down.cast(),
            units: self.units.iter().map(|u| u.cast()).collect(),
        }
    }

    fn for_each_block(&mut self, f: &mut dyn FnMut(&mut ConvBlock<T>)) {
        f(&mut self.down);
        for u in &mut self.units {
            f(&mut u.reduce);
            f(&mut u.expand);
        }
    }
}

/// One output branch of the neck: lateral 1x1, 3x3 block, then the bare
/// prediction conv.
#[derive(Debug, Clone)]
struct Branch<T: Scalar> {
    lateral: ConvBlock<T>,
    block: ConvBlock<T>,
    predict: Conv2d<T>,
}

impl<T: Scalar> Branch<T> {
    fn new(cin: usize, width: usize, out: usize, norm: NormMode) -> Self {
        Branch {
            lateral: ConvBlock::new(cin, width, 1, 1, norm),
            block: ConvBlock::new(width, width * 2, 3, 1, norm),
            predict: Conv2d::new(width * 2, out, 1, 1, true),
        }
    }

    /// Returns `(lateral features, raw prediction)`.
    fn forward(&mut self, x: &Tensor<T>, phase: Phase) -> Result<(Tensor<T>, Tensor<T>)> {
        let lat = self.lateral.forward(x, phase)?;
        let h = self.block.forward(&lat, phase)?;
        let p = self.predict.forward(&h)?;
        Ok((lat, p))
    }

    /// `d_lat_extra` is gradient reaching the lateral output from the
    /// upsampling path.
    fn backward(&mut self, d_pred: &Tensor<T>, d_lat_extra: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let g = self.predict.backward(d_pred)?;
        let mut g = self.block.backward(&g)?;
        if let Some(extra) = d_lat_extra {
            g.add_assign(extra);
        }
        self.lateral.backward(&g)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.lateral.visit(&join(prefix, "lateral"), f);
        self.block.visit(&join(prefix, "block"), f);
        self.predict.visit(&join(prefix, "predict"), f);
    }

    fn cast<U: Scalar>(&self) -> Branch<U> {
        Branch {
            lateral: self.lateral.cast(),
            block: self.block.cast(),
            predict: self.predict.cast(),
        }
    }
}

#[derive(Debug, Clone)]
struct NeckCache {
    c3: usize,
    c4: usize,
    up4: usize,
    up5: usize,
}

/// Residual backbone down to stride 32, a top-down neck merging strides
/// 32 -> 16 -> 8 by nearest upsampling and concatenation, and one
/// prediction conv per level emitting `3 * (5 + C)` channels.
#[derive(Debug, Clone)]
pub struct DetectorModel<T: Scalar = f32> {
    pub config: ModelConfig,
    stem: ConvBlock<T>,
    stages: Vec<Stage<T>>,
    /// Levels ordered stride 32, 16, 8.
    branches: Vec<Branch<T>>,
    /// Channel-reducing 1x1 blocks before each upsample (32->16, 16->8).
    reducers: Vec<ConvBlock<T>>,
    cache: Option<NeckCache>,
}

pub fn build_toy_detector<T: Scalar>(num_classes: usize, width_multiplier: usize, norm: NormMode) -> Result<DetectorModel<T>> {
    DetectorModel::new(ModelConfig::new(num_classes, width_multiplier, norm))
}

impl<T: Scalar> DetectorModel<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.width_multiplier < 1 {
            return Err(Error::invalid("width multiplier must be at least 1"));
        }
        if config.num_classes == 0 {
            return Err(Error::invalid("detector needs at least one category"));
        }
        let m = config.width_multiplier;
        let norm = config.norm;
        let out = ANCHORS_PER_LEVEL * (5 + config.num_classes);
        let stem = ConvBlock::new(3, STEM_WIDTH * m, 3, 1, norm);
        let mut stages = Vec::new();
        let mut cin = STEM_WIDTH * m;
        for (w, &n) in STAGE_WIDTHS.iter().zip(&STAGE_UNITS) {
            let c = w * m;
            stages.push(Stage {
                down: ConvBlock::new(cin, c, 3, 2, norm),
                units: (0..n).map(|_| ResidualUnit::new(c, norm)).collect(),
            });
            cin = c;
        }
        let [c3, c4, c5] = [STAGE_WIDTHS[2] * m, STAGE_WIDTHS[3] * m, STAGE_WIDTHS[4] * m];
        let [n3, n4, n5] = [NECK_WIDTHS[0] * m, NECK_WIDTHS[1] * m, NECK_WIDTHS[2] * m];
        let (u5, u4) = (n5 / 2, n4 / 2);
        let branches = vec![
            Branch::new(c5, n5, out, norm),
            Branch::new(c4 + u5, n4, out, norm),
            Branch::new(c3 + u4, n3, out, norm),
        ];
        let reducers = vec![ConvBlock::new(n5, u5, 1, 1, norm), ConvBlock::new(n4, u4, 1, 1, norm)];
        Ok(DetectorModel {
            config,
            stem,
            stages,
            branches,
            reducers,
            cache: None,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Runs the network on an NCHW batch whose side is a multiple of 32.
    pub fn forward(&mut self, x: &Tensor<T>, phase: Phase) -> Result<GridPrediction<T>> {
        let (_, c, h, w) = x.dims4();
        if c != 3 || h == 0 || h % 32 != 0 || w != h {
            return Err(Error::shape(
                "detector",
                format!("input must be [N, 3, S, S] with S a multiple of 32, got {:?}", x.shape()),
            ));
        }
        let mut y = self.stem.forward(x, phase)?;
        let mut feats = Vec::with_capacity(5);
        for s in &mut self.stages {
            y = s.forward(&y, phase)?;
            feats.push(y.clone());
        }
        let (c3, c4, c5) = (&feats[2], &feats[3], &feats[4]);
        let (lat5, p5) = self.branches[0].forward(c5, phase)?;
        let r5 = upsample2x(&self.reducers[0].forward(&lat5, phase)?);
        let up5 = r5.shape()[1];
        let (lat4, p4) = self.branches[1].forward(&concat_channels(&r5, c4)?, phase)?;
        let r4 = upsample2x(&self.reducers[1].forward(&lat4, phase)?);
        let up4 = r4.shape()[1];
        let (_, p3) = self.branches[2].forward(&concat_channels(&r4, c3)?, phase)?;
        self.cache = Some(NeckCache {
            c3: c3.shape()[1],
            c4: c4.shape()[1],
            up4,
            up5,
        });
        let k = self.config.num_classes;
        let grid = GridPrediction {
            levels: vec![
                LevelGrid::from_nchw(&p3, k, LEVEL_STRIDES[0])?,
                LevelGrid::from_nchw(&p4, k, LEVEL_STRIDES[1])?,
                LevelGrid::from_nchw(&p5, k, LEVEL_STRIDES[2])?,
            ],
        };
        for l in &grid.levels {
            l.data.check_finite("detector output")?;
        }
        Ok(grid)
    }

    /// Accumulates parameter gradients for `grad` (laid out like the
    /// forward output) and returns the input gradient.
    pub fn backward(&mut self, grad: &GridPrediction<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::invalid("detector backward without forward"))?;
        let g3 = grad.levels[0].to_nchw();
        let g4 = grad.levels[1].to_nchw();
        let g5 = grad.levels[2].to_nchw();

        let d_cat3 = self.branches[2].backward(&g3, None)?;
        let (d_r4, d_c3) = split_channels(&d_cat3, cache.up4);
        let d_lat4 = self.reducers[1].backward(&upsample2x_backward(&d_r4))?;
        let d_cat4 = self.branches[1].backward(&g4, Some(&d_lat4))?;
        let (d_r5, d_c4) = split_channels(&d_cat4, cache.up5);
        let d_lat5 = self.reducers[0].backward(&upsample2x_backward(&d_r5))?;
        let d_c5 = self.branches[0].backward(&g5, Some(&d_lat5))?;
        debug_assert_eq!(d_c3.shape()[1], cache.c3);
        debug_assert_eq!(d_c4.shape()[1], cache.c4);

        let mut g = d_c5;
        for (i, s) in self.stages.iter_mut().enumerate().rev() {
            if i == 3 {
                g.add_assign(&d_c4);
            } else if i == 2 {
                g.add_assign(&d_c3);
            }
            g = s.backward(&g)?;
        }
        self.stem.backward(&g)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
        self.for_each_block(&mut |b| b.clear_cache());
        for br in &mut self.branches {
            br.predict.clear_cache();
        }
    }

    fn for_each_block(&mut self, f: &mut dyn FnMut(&mut ConvBlock<T>)) {
        f(&mut self.stem);
        for s in &mut self.stages {
            s.for_each_block(f);
        }
        for br in &mut self.branches {
            f(&mut br.lateral);
            f(&mut br.block);
        }
        for r in &mut self.reducers {
            f(r);
        }
    }

    /// Switches every normalization layer to `mode` without touching its
    /// statistics.
    pub fn set_norm_mode(&mut self, mode: NormMode) {
        self.config.norm = mode;
        self.for_each_block(&mut |b| b.norm.mode = mode);
    }

    pub fn set_update_stats(&mut self, on: bool) {
        self.for_each_block(&mut |b| b.norm.update_stats = on);
    }

    pub fn set_norm_momentum(&mut self, momentum: f64) {
        self.for_each_block(&mut |b| b.norm.momentum = momentum);
    }

    pub fn cast<U: Scalar>(&self) -> DetectorModel<U> {
        DetectorModel {
            config: self.config,
            stem: self.stem.cast(),
            stages: self.stages.iter().map(|s| s.cast()).collect(),
            branches: self.branches.iter().map(|b| b.cast()).collect(),
            reducers: self.reducers.iter().map(|r| r.cast()).collect(),
            cache: None,
        }
    }

    /// Names and shapes of every param and buffer, in visiting order.
    pub fn tensor_shapes(&mut self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, s| {
            let shape = match s {
                Slot::Param(p) => p.value.shape().to_vec(),
                Slot::Buffer(b) => b.shape().to_vec(),
            };
            out.push((n.to_string(), shape));
        });
        out
    }

    /// Re-draws conv weights from the Xavier/Glorot uniform distribution,
    /// `±sqrt(6 / (fan_in + fan_out))` with `fan = channels * k * k`, and
    /// resets biases, norm affine terms and moving statistics.
    pub fn init_xavier(&mut self, seed: u64) {
        init_xavier_where(self, seed, &|_| true);
    }

    /// Every tensor restored from `ck`.
    pub fn restore_full(&mut self, ck: &Checkpoint) -> Result<usize> {
        ck.restore(self, &|_| true)
    }

    /// Backbone tensors restored from `ck`; everything else Xavier-drawn from
    /// `seed`.
    pub fn restore_backbone(&mut self, ck: &Checkpoint, seed: u64) -> Result<usize> {
        init_xavier_where(self, seed, &|n| !is_backbone(n));
        ck.restore(self, &is_backbone)
    }

    pub fn zero_moments(&mut self) {
        self.visit("", &mut |_, s| {
            if let Slot::Param(p) = s {
                p.reset_moments();
            }
        });
    }
}

pub fn is_backbone(name: &str) -> bool {
    name.starts_with("backbone.")
}

pub fn xavier_bound(shape: &[usize]) -> f64 {
    let rf: usize = shape[2..].iter().product();
    let fan_in = shape[1] * rf;
    let fan_out = shape[0] * rf;
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn init_xavier_where<T: Scalar>(model: &mut DetectorModel<T>, seed: u64, select: &dyn Fn(&str) -> bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.visit("", &mut |name, slot| {
        // the stream advances for every tensor so partial inits draw the
        // same values a full init would
        match slot {
            Slot::Param(p) if p.value.shape().len() == 4 => {
                let bound = xavier_bound(p.value.shape());
                let draws: Vec<f64> = (0..p.value.len()).map(|_| rng.gen_range(-bound..=bound)).collect();
                if select(name) {
                    for (v, d) in p.value.data_mut().iter_mut().zip(draws) {
                        *v = T::of(d);
                    }
                    p.reset_moments();
                }
            }
            Slot::Param(p) if select(name) => {
                let fill = if name.ends_with("gamma") { T::one() } else { T::zero() };
                p.value.fill(fill);
                p.reset_moments();
            }
            Slot::Buffer(b) if select(name) => {
                let fill = if name.ends_with("moving_var") { T::one() } else { T::zero() };
                b.fill(fill);
            }
            _ => {}
        }
    });
}

impl<T: Scalar> Module<T> for DetectorModel<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        let bb = join(prefix, "backbone");
        self.stem.visit(&join(&bb, "stem"), f);
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit(&join(&bb, &format!("stage{}", i + 1)), f);
        }
        let neck = join(prefix, "neck");
        for (br, s) in self.branches.iter_mut().zip([32, 16, 8]) {
            br.visit(&join(&neck, &format!("p{s}")), f);
        }
        for (r, s) in self.reducers.iter_mut().zip([32, 16]) {
            r.visit(&join(&neck, &format!("reduce{s}")), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes_and_channels() {
        let mut m = build_toy_detector::<f32>(4, 1, NormMode::BatchNorm).unwrap();
        m.init_xavier(1);
        let g = m.forward(&Tensor::full(&[1, 3, 128, 128], 0.5), Phase::Infer).unwrap();
        let dims: Vec<(usize, usize, usize)> = g.levels.iter().map(|l| (l.height(), l.width(), l.entry_len())).collect();
        assert_eq!(dims, vec![(16, 16, 9), (8, 8, 9), (4, 4, 9)]);
        assert_eq!(g.levels[0].data.shape()[3] * g.levels[0].entry_len(), 27);
        assert_eq!(g.levels.iter().map(|l| l.stride).collect::<Vec<_>>(), vec![8, 16, 32]);
    }

    #[test]
    fn same_config_same_shapes() {
        let mut a = build_toy_detector::<f32>(3, 2, NormMode::renorm()).unwrap();
        let mut b = build_toy_detector::<f32>(3, 2, NormMode::renorm()).unwrap();
        assert_eq!(a.tensor_shapes(), b.tensor_shapes());
        assert!(a.num_params() > 10_000);
    }

    #[test]
    fn rejects_bad_input_size() {
        let mut m = build_toy_detector::<f32>(1, 1, NormMode::BatchNorm).unwrap();
        assert!(m.forward(&Tensor::zeros(&[1, 3, 100, 100]), Phase::Infer).is_err());
    }

    #[test]
    fn xavier_bound_and_statistics() {
        assert!((xavier_bound(&[8, 8, 3, 3]) - (6.0f64 / 144.0).sqrt()).abs() < 1e-12);
        assert!((xavier_bound(&[8, 8, 3, 3]) - 0.2041).abs() < 1e-4);
        let mut m = build_toy_detector::<f32>(4, 1, NormMode::BatchNorm).unwrap();
        m.init_xavier(3);
        m.visit("", &mut |_, s| {
            if let Slot::Param(p) = s {
                if p.value.shape().len() == 4 {
                    let bound = xavier_bound(p.value.shape()) as f32;
                    assert!(p.value.data().iter().all(|v| v.abs() <= bound));
                    if p.value.len() > 1000 {
                        let mean = p.value.sum() / p.value.len() as f32;
                        assert!(mean.abs() < bound * 0.1);
                    }
                }
            }
        });
    }

    #[test]
    fn backbone_names_are_prefixed() {
        let mut m = build_toy_detector::<f32>(4, 1, NormMode::BatchNorm).unwrap();
        let names: Vec<String> = m.tensor_shapes().into_iter().map(|(n, _)| n).collect();
        assert!(names.iter().any(|n| n == "backbone.stem.conv.weight"));
        assert!(names.iter().any(|n| n == "neck.p8.predict.bias"));
        assert!(names.iter().filter(|n| is_backbone(n)).count() > names.len() / 2);
    }
}
