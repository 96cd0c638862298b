//! Three-level YOLO head: grid layout, decoding, target assignment, loss and
//! end-to-end prediction.

mod loss;
mod predict;
mod targets;

pub use loss::{total_loss, LossBreakdown, LossConfig};
pub use predict::{image_to_tensor, predict, predict_batch, PredictConfig};
pub use targets::{build_targets, LevelTargets, TargetSet, DEFAULT_IGNORE_THRESHOLD};

use crate::anchors::{AnchorSet, LEVEL_STRIDES};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection};
use crate::nn::activation::{sigmoid, softmax};
use crate::nn::{Scalar, Tensor};

/// Anchors predicted per cell.
pub const ANCHORS_PER_LEVEL: usize = 3;

/// One pyramid level in `[batch, H, W, 3, 5 + C]` layout, holding
/// `(tx, ty, tw, th, to, class logits...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelGrid<T: Scalar = f32> {
    pub stride: u32,
    pub data: Tensor<T>,
}

impl<T: Scalar> LevelGrid<T> {
    pub fn zeros(batch: usize, h: usize, w: usize, num_classes: usize, stride: u32) -> Self {
        LevelGrid {
            stride,
            data: Tensor::zeros(&[batch, h, w, ANCHORS_PER_LEVEL, 5 + num_classes]),
        }
    }

    pub fn batch(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn entry_len(&self) -> usize {
        self.data.shape()[4]
    }

    pub fn num_classes(&self) -> usize {
        self.entry_len() - 5
    }

    /// Flat offset of the entry for `(image, y, x, slot)`.
    pub fn offset(&self, b: usize, y: usize, x: usize, a: usize) -> usize {
        (((b * self.height() + y) * self.width() + x) * ANCHORS_PER_LEVEL + a) * self.entry_len()
    }

    pub fn entry(&self, b: usize, y: usize, x: usize, a: usize) -> &[T] {
        let o = self.offset(b, y, x, a);
        &self.data.data()[o..o + self.entry_len()]
    }

    pub fn entry_mut(&mut self, b: usize, y: usize, x: usize, a: usize) -> &mut [T] {
        let o = self.offset(b, y, x, a);
        let n = self.entry_len();
        &mut self.data.data_mut()[o..o + n]
    }

    /// From a head conv output `[batch, 3 * (5 + C), H, W]`.
    pub fn from_nchw(x: &Tensor<T>, num_classes: usize, stride: u32) -> Result<Self> {
        let (n, c, h, w) = x.dims4();
        let e = 5 + num_classes;
        if c != ANCHORS_PER_LEVEL * e {
            return Err(Error::shape(
                "head",
                format!("{c} channels cannot hold 3 x (5 + {num_classes})"),
            ));
        }
        let mut out = LevelGrid::zeros(n, h, w, num_classes, stride);
        let src = x.data();
        let dst = out.data.data_mut();
        let hw = h * w;
        for b in 0..n {
            for ch in 0..c {
                let plane = &src[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                for (p, &v) in plane.iter().enumerate() {
                    dst[(b * hw + p) * c + ch] = v;
                }
            }
        }
        Ok(out)
    }

    /// Back to `[batch, 3 * (5 + C), H, W]`.
    pub fn to_nchw(&self) -> Tensor<T> {
        let (n, h, w) = (self.batch(), self.height(), self.width());
        let c = ANCHORS_PER_LEVEL * self.entry_len();
        let hw = h * w;
        let mut out = Tensor::zeros(&[n, c, h, w]);
        let src = self.data.data();
        let dst = out.data_mut();
        for b in 0..n {
            for p in 0..hw {
                for ch in 0..c {
                    dst[(b * c + ch) * hw + p] = src[(b * hw + p) * c + ch];
                }
            }
        }
        out
    }
}

/// Head outputs for all three levels, finest (stride 8) first.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPrediction<T: Scalar = f32> {
    pub levels: Vec<LevelGrid<T>>,
}

impl<T: Scalar> GridPrediction<T> {
    pub fn zeros(batch: usize, input_size: usize, num_classes: usize) -> Self {
        GridPrediction {
            levels: LEVEL_STRIDES
                .iter()
                .map(|&s| {
                    let g = input_size / s as usize;
                    LevelGrid::zeros(batch, g, g, num_classes, s)
                })
                .collect(),
        }
    }

    pub fn batch(&self) -> usize {
        self.levels[0].batch()
    }

    pub fn num_classes(&self) -> usize {
        self.levels[0].num_classes()
    }

    /// Input side length implied by the finest grid.
    pub fn input_size(&self) -> usize {
        self.levels[0].width() * self.levels[0].stride as usize
    }

    pub fn zeros_like(&self) -> Self {
        GridPrediction {
            levels: self
                .levels
                .iter()
                .map(|l| LevelGrid {
                    stride: l.stride,
                    data: Tensor::zeros(l.data.shape()),
                })
                .collect(),
        }
    }
}

/// Decodes one entry: corner box in input pixels, objectness, class probs.
pub fn decode_entry<T: Scalar>(
    entry: &[T],
    cell: (usize, usize),
    stride: f64,
    anchor: (f64, f64),
) -> (BBox, f64, Vec<f64>) {
    let t: Vec<f64> = entry.iter().map(|v| v.f64()).collect();
    let cx = (sigmoid(t[0]) + cell.0 as f64) * stride;
    let cy = (sigmoid(t[1]) + cell.1 as f64) * stride;
    let w = anchor.0 * t[2].exp();
    let h = anchor.1 * t[3].exp();
    (BBox::from_center(cx, cy, w, h), sigmoid(t[4]), softmax(&t[5..]))
}

/// All detections scoring at least `min_confidence`, per image, in the
/// input frame and clipped to it. Score is objectness times the best class
/// probability.
pub fn decode_threshold<T: Scalar>(
    grid: &GridPrediction<T>,
    anchors: &AnchorSet,
    min_confidence: f64,
) -> Vec<Vec<Detection>> {
    let size = grid.input_size() as f64;
    let mut out = vec![Vec::new(); grid.batch()];
    for (li, level) in grid.levels.iter().enumerate() {
        let level_anchors = anchors.level_anchors(li);
        let stride = level.stride as f64;
        for (b, dets) in out.iter_mut().enumerate() {
            for y in 0..level.height() {
                for x in 0..level.width() {
                    for (a, &anchor) in level_anchors.iter().enumerate() {
                        let e = level.entry(b, y, x, a);
                        // cheap reject before the softmax
                        let obj = sigmoid(e[4].f64());
                        if obj < min_confidence {
                            continue;
                        }
                        let (bbox, obj, probs) = decode_entry(e, (x, y), stride, anchor);
                        let (category, p) = probs
                            .iter()
                            .copied()
                            .enumerate()
                            .fold((0, f64::NEG_INFINITY), |best, (i, p)| if p > best.1 { (i, p) } else { best });
                        let confidence = obj * p;
                        if confidence >= min_confidence {
                            dets.push(Detection {
                                bbox: bbox.clip(size, size),
                                category,
                                confidence,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Every prediction of every level, per image.
pub fn decode<T: Scalar>(grid: &GridPrediction<T>, anchors: &AnchorSet) -> Vec<Vec<Detection>> {
    decode_threshold(grid, anchors, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchors() -> AnchorSet {
        AnchorSet::bridge_default().scaled(0.25)
    }

    #[test]
    fn nchw_round_trip() {
        let x = Tensor::from_vec(&[2, 3 * 7, 2, 3], (0..2 * 21 * 6).map(|v| v as f32).collect()).unwrap();
        let g = LevelGrid::from_nchw(&x, 2, 16).unwrap();
        assert_eq!(g.data.shape(), &[2, 2, 3, 3, 7]);
        // channel 8 = slot 1, field 1 at pixel (y 1, x 2) of image 1
        assert_eq!(g.entry(1, 1, 2, 1)[1], x.data()[(21 + 8) * 6 + 5]);
        assert_eq!(g.to_nchw(), x);
        assert!(LevelGrid::from_nchw(&x, 3, 16).is_err());
    }

    #[test]
    fn zero_logits_decode_to_cell_centre_and_anchor_size() {
        let grid = GridPrediction::<f64>::zeros(1, 64, 4);
        let dets = decode(&grid, &anchors());
        assert_eq!(dets[0].len(), 3 * (64 + 16 + 4));
        let a = anchors();
        let (bbox, obj, probs) = decode_entry(grid.levels[1].entry(0, 2, 1, 0), (1, 2), 16.0, a.level_anchors(1)[0]);
        let (cx, cy) = bbox.center();
        assert!((cx - 24.0).abs() < 1e-12 && (cy - 40.0).abs() < 1e-12);
        assert!((bbox.width() - a.level_anchors(1)[0].0).abs() < 1e-12);
        assert_eq!(obj, 0.5);
        assert!(probs.iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn log_two_doubles_width_and_large_objectness_saturates() {
        let mut e = vec![0.0f64; 9];
        e[2] = 2f64.ln();
        e[4] = 50.0;
        let (b, obj, _) = decode_entry(&e, (0, 0), 8.0, (10.0, 6.0));
        assert!((b.width() - 20.0).abs() < 1e-12);
        assert!((b.height() - 6.0).abs() < 1e-12);
        assert!(obj > 1.0 - 1e-15);
    }

    #[test]
    fn threshold_filters() {
        let mut grid = GridPrediction::<f32>::zeros(2, 64, 2);
        grid.levels[2].entry_mut(1, 0, 1, 2)[4] = 8.0;
        grid.levels[2].entry_mut(1, 0, 1, 2)[6] = 8.0;
        let dets = decode_threshold(&grid, &anchors(), 0.9);
        assert!(dets[0].is_empty());
        assert_eq!(dets[1].len(), 1);
        assert_eq!(dets[1][0].category, 1);
    }
}
