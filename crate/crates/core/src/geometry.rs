//! Axis-aligned box arithmetic shared by every stage of the pipeline.
//!
//! Boxes are kept in corner form `(xmin, ymin, xmax, ymax)` in continuous
//! pixel coordinates with the origin at the top-left corner. The detection
//! head works in center form internally and converts at its boundary.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// Default IoU threshold for per-category non-maximum suppression.
pub const DEFAULT_NMS_THRESHOLD: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    /// Builds a box from two corners, reordering them if needed.
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox {
            xmin: x0.min(x1),
            ymin: y0.min(y1),
            xmax: x0.max(x1),
            ymax: y0.max(y1),
        }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        let (hw, hh) = (0.5 * w.abs(), 0.5 * h.abs());
        BBox::new(cx - hw, cy - hh, cx + hw, cy + hh)
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.xmin + self.xmax),
            0.5 * (self.ymin + self.ymax),
        )
    }

    pub fn is_valid(&self) -> bool {
        self.xmin <= self.xmax && self.ymin <= self.ymax
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.xmax.min(other.xmax) - self.xmin.max(other.xmin)).max(0.0);
        let h = (self.ymax.min(other.ymax) - self.ymin.max(other.ymin)).max(0.0);
        w * h
    }

    /// Clamps the box to `[0, width] x [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> BBox {
        BBox {
            xmin: self.xmin.clamp(0.0, width),
            ymin: self.ymin.clamp(0.0, height),
            xmax: self.xmax.clamp(0.0, width),
            ymax: self.ymax.clamp(0.0, height),
        }
    }

    pub fn is_inside(&self, width: f64, height: f64) -> bool {
        self.xmin >= 0.0 && self.ymin >= 0.0 && self.xmax <= width && self.ymax <= height
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            xmin: self.xmin + dx,
            ymin: self.ymin + dy,
            xmax: self.xmax + dx,
            ymax: self.ymax + dy,
        }
    }

    pub fn scale(&self, sx: f64, sy: f64) -> BBox {
        BBox::new(
            self.xmin * sx,
            self.ymin * sy,
            self.xmax * sx,
            self.ymax * sy,
        )
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub category: usize,
    pub confidence: f64,
}

/// Intersection over union. Returns 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// IoU of two boxes that share their top-left corner; the anchor clustering
/// metric, which only looks at dimensions.
pub fn wh_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = a.0.min(b.0).max(0.0) * a.1.min(b.1).max(0.0);
    let union = a.0 * a.1 + b.0 * b.1 - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Total order used wherever detections are ranked: confidence descending,
/// then category, xmin and ymin ascending.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.category.cmp(&b.category))
        .then(a.bbox.xmin.total_cmp(&b.bbox.xmin))
        .then(a.bbox.ymin.total_cmp(&b.bbox.ymin))
}

/// Greedy per-category non-maximum suppression.
///
/// A detection is dropped when its IoU with an already kept detection of the
/// same category exceeds `iou_threshold`. The output is sorted with
/// [`detection_order`].
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(detection_order);
    let mut kept: Vec<Detection> = Vec::with_capacity(sorted.len());
    for d in sorted {
        let suppressed = kept
            .iter()
            .any(|k| k.category == d.category && iou(&k.bbox, &d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

/// Aspect-preserving resize of a `source_w x source_h` frame into a
/// `target x target` square with symmetric padding (floor on top/left).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LetterboxTransform {
    pub scale: f64,
    pub pad_x: f64,
    pub pad_y: f64,
    pub source_w: u32,
    pub source_h: u32,
    pub target: u32,
}

impl LetterboxTransform {
    pub fn new(source_w: u32, source_h: u32, target: u32) -> Self {
        assert!(
            source_w > 0 && source_h > 0 && target > 0,
            "letterbox dimensions must be positive"
        );
        let scale = target as f64 / source_w.max(source_h) as f64;
        let (new_w, new_h) = Self::resized(source_w, source_h, scale, target);
        LetterboxTransform {
            scale,
            pad_x: ((target - new_w) / 2) as f64,
            pad_y: ((target - new_h) / 2) as f64,
            source_w,
            source_h,
            target,
        }
    }

    fn resized(w: u32, h: u32, scale: f64, target: u32) -> (u32, u32) {
        let nw = ((w as f64 * scale).round() as u32).clamp(1, target);
        let nh = ((h as f64 * scale).round() as u32).clamp(1, target);
        (nw, nh)
    }

    /// Size of the resized content inside the padded square.
    pub fn content_size(&self) -> (u32, u32) {
        Self::resized(self.source_w, self.source_h, self.scale, self.target)
    }

    pub fn apply(&self, b: &BBox) -> BBox {
        BBox {
            xmin: b.xmin * self.scale + self.pad_x,
            ymin: b.ymin * self.scale + self.pad_y,
            xmax: b.xmax * self.scale + self.pad_x,
            ymax: b.ymax * self.scale + self.pad_y,
        }
    }

    pub fn invert(&self, b: &BBox) -> BBox {
        BBox {
            xmin: (b.xmin - self.pad_x) / self.scale,
            ymin: (b.ymin - self.pad_y) / self.scale,
            xmax: (b.xmax - self.pad_x) / self.scale,
            ymax: (b.ymax - self.pad_y) / self.scale,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(b: [f64; 4], category: usize, confidence: f64) -> Detection {
        Detection {
            bbox: b.into(),
            category,
            confidence,
        }
    }

    #[test]
    fn iou_fixtures() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 6.0, 6.0)), 0.0);
        let b = BBox::new(1.0, 1.0, 3.0, 3.0);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-12);
        let empty = BBox::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&empty, &empty), 0.0);
    }

    #[test]
    fn wh_iou_fixtures() {
        assert_eq!(wh_iou((2.0, 2.0), (2.0, 2.0)), 1.0);
        assert_eq!(wh_iou((2.0, 2.0), (4.0, 4.0)), 0.25);
        assert_eq!(wh_iou((0.0, 0.0), (4.0, 4.0)), 0.0);
    }

    #[test]
    fn nms_same_category_suppressed() {
        let a = det([0.0, 0.0, 10.0, 10.0], 0, 0.9);
        let b = det([0.0, 0.0, 10.0, 9.0], 0, 0.8);
        assert!(iou(&a.bbox, &b.bbox) > 0.5);
        assert_eq!(nms(&[b, a], 0.5), vec![a]);
    }

    #[test]
    fn nms_keeps_other_categories() {
        let a = det([0.0, 0.0, 10.0, 10.0], 0, 0.9);
        let b = det([0.0, 0.0, 10.0, 9.0], 1, 0.8);
        assert_eq!(nms(&[a, b], 0.5), vec![a, b]);
        assert!(nms(&[], 0.5).is_empty());
    }

    #[test]
    fn letterbox_landscape() {
        let t = LetterboxTransform::new(400, 300, 416);
        assert!((t.scale - 1.04).abs() < 1e-12);
        assert_eq!(t.pad_x, 0.0);
        assert_eq!(t.pad_y, 52.0);
        let b = t.apply(&BBox::new(0.0, 0.0, 400.0, 300.0));
        for (got, want) in b.to_array().iter().zip([0.0, 52.0, 416.0, 364.0]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn letterbox_identity_for_matching_square() {
        let t = LetterboxTransform::new(416, 416, 416);
        let b = BBox::new(3.5, 4.0, 100.25, 200.0);
        assert_eq!(t.scale, 1.0);
        assert_eq!(t.apply(&b), b);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..500.0f64, 0.0..500.0f64, 0.0..200.0f64, 0.0..200.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            if a.area() > 0.0 {
                prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn wh_iou_matches_corner_anchored_iou(w0 in 0.0..100.0f64, h0 in 0.0..100.0f64,
                                              w1 in 0.0..100.0f64, h1 in 0.0..100.0f64) {
            let direct = wh_iou((w0, h0), (w1, h1));
            let boxed = iou(&BBox::new(0.0, 0.0, w0, h0), &BBox::new(0.0, 0.0, w1, h1));
            prop_assert!((direct - boxed).abs() < 1e-12);
        }

        #[test]
        fn nms_output_is_valid_subset(raw in prop::collection::vec((arb_box(), 0usize..3, 0.0..=1.0f64), 0..40),
                                      thr in 0.1..0.9f64) {
            let dets: Vec<Detection> = raw
                .into_iter()
                .map(|(bbox, category, confidence)| Detection { bbox, category, confidence })
                .collect();
            let kept = nms(&dets, thr);
            for k in &kept {
                prop_assert!(dets.contains(k));
            }
            for (i, a) in kept.iter().enumerate() {
                for b in &kept[i + 1..] {
                    prop_assert!(a.confidence >= b.confidence);
                    if a.category == b.category {
                        prop_assert!(iou(&a.bbox, &b.bbox) <= thr);
                    }
                }
            }
        }

        #[test]
        fn letterbox_round_trip(sw in 1u32..2000, sh in 1u32..2000, target in 32u32..1024,
                                fx in 0.0..1.0f64, fy in 0.0..1.0f64, fw in 0.0..1.0f64, fh in 0.0..1.0f64) {
            let t = LetterboxTransform::new(sw, sh, target);
            let x0 = fx * sw as f64;
            let y0 = fy * sh as f64;
            let b = BBox::new(x0, y0, x0 + fw * (sw as f64 - x0), y0 + fh * (sh as f64 - y0));
            let back = t.invert(&t.apply(&b));
            for (p, q) in back.to_array().iter().zip(b.to_array()) {
                prop_assert!((p - q).abs() < 1e-6);
            }
        }
    }
}
