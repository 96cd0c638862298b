use super::{GridPrediction, LevelGrid, ANCHORS_PER_LEVEL};
use crate::anchors::{AnchorSet, LEVEL_STRIDES};
use crate::dataset::ObjectLabel;
use crate::error::{Error, Result};
use crate::geometry::{iou, wh_iou, BBox};

pub const DEFAULT_IGNORE_THRESHOLD: f64 = 0.5;

/// Per-level training targets, indexed like the grid entries:
/// `((image * H + y) * W + x) * 3 + slot`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTargets {
    pub stride: u32,
    pub height: usize,
    pub width: usize,
    pub positive: Vec<bool>,
    pub ignore: Vec<bool>,
    /// `(offset x, offset y, ln(w / pw), ln(h / ph))` at positives.
    pub coords: Vec<[f64; 4]>,
    pub category: Vec<usize>,
    /// Index of the label owning a positive, within its image.
    pub owner: Vec<Option<usize>>,
}

impl LevelTargets {
    fn new(batch: usize, height: usize, width: usize, stride: u32) -> Self {
        let n = batch * height * width * ANCHORS_PER_LEVEL;
        LevelTargets {
            stride,
            height,
            width,
            positive: vec![false; n],
            ignore: vec![false; n],
            coords: vec![[0.0; 4]; n],
            category: vec![0; n],
            owner: vec![None; n],
        }
    }

    pub fn index(&self, b: usize, y: usize, x: usize, a: usize) -> usize {
        ((b * self.height + y) * self.width + x) * ANCHORS_PER_LEVEL + a
    }

    /// Inverse of [`LevelTargets::index`].
    pub fn unindex(&self, i: usize) -> (usize, usize, usize, usize) {
        let a = i % ANCHORS_PER_LEVEL;
        let cell = i / ANCHORS_PER_LEVEL;
        let x = cell % self.width;
        let y = (cell / self.width) % self.height;
        let b = cell / (self.width * self.height);
        (b, y, x, a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    pub levels: Vec<LevelTargets>,
    pub batch: usize,
    pub input_size: usize,
    pub num_classes: usize,
    pub num_objects: usize,
    pub num_positive: usize,
    /// Labels that lost their slot to a later label of the same image.
    pub collisions: usize,
}

/// Assigns every label to the single best of the nine anchors by `wh_iou`
/// and the cell containing its centre. Prior boxes (anchor centred on a cell)
/// overlapping any label above `ignore_threshold` are exempt from the
/// negative confidence penalty.
///
/// `labels[b]` holds image `b`'s boxes in the `input_size` frame.
pub fn build_targets(
    labels: &[Vec<ObjectLabel>],
    anchors: &AnchorSet,
    input_size: usize,
    num_classes: usize,
    ignore_threshold: f64,
) -> Result<TargetSet> {
    if input_size == 0 || input_size % 32 != 0 {
        return Err(Error::invalid(format!("input size {input_size} is not a positive multiple of 32")));
    }
    if anchors.anchors.len() != 3 * ANCHORS_PER_LEVEL {
        return Err(Error::invalid(format!(
            "head expects 9 anchors, got {}",
            anchors.anchors.len()
        )));
    }
    let batch = labels.len();
    let mut levels: Vec<LevelTargets> = LEVEL_STRIDES
        .iter()
        .map(|&s| {
            let g = input_size / s as usize;
            LevelTargets::new(batch, g, g, s)
        })
        .collect();
    let size = input_size as f64;
    let mut num_positive = 0;
    let mut collisions = 0;
    let mut num_objects = 0;

    for (b, image_labels) in labels.iter().enumerate() {
        for (li, label) in image_labels.iter().enumerate() {
            let bb = &label.bbox;
            if !bb.is_valid() || !bb.is_inside(size + 1e-6, size + 1e-6) {
                return Err(Error::invalid(format!(
                    "label {li} of image {b} {:?} is empty or outside the {input_size}px frame",
                    bb.to_array()
                )));
            }
            if label.category >= num_classes {
                return Err(Error::invalid(format!(
                    "label category {} out of range for {num_classes} classes",
                    label.category
                )));
            }
            num_objects += 1;
            let wh = (bb.width(), bb.height());
            let best = (0..anchors.anchors.len())
                .map(|i| (i, wh_iou(wh, anchors.anchors[i])))
                .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc })
                .0;
            let (level, slot) = anchors.locate(best);
            let lt = &mut levels[level];
            let stride = lt.stride as f64;
            let (cx, cy) = bb.center();
            let gx = ((cx / stride).floor() as usize).min(lt.width - 1);
            let gy = ((cy / stride).floor() as usize).min(lt.height - 1);
            let idx = lt.index(b, gy, gx, slot);
            let (pw, ph) = anchors.anchors[best];
            if lt.positive[idx] {
                collisions += 1;
            } else {
                num_positive += 1;
            }
            lt.positive[idx] = true;
            lt.owner[idx] = Some(li);
            lt.coords[idx] = [
                (cx / stride - gx as f64).clamp(0.0, 1.0 - f64::EPSILON),
                (cy / stride - gy as f64).clamp(0.0, 1.0 - f64::EPSILON),
                (wh.0 / pw).ln(),
                (wh.1 / ph).ln(),
            ];
            lt.category[idx] = label.category;
        }
    }

    for (l, lt) in levels.iter_mut().enumerate() {
        let level_anchors = anchors.level_anchors(l);
        let stride = lt.stride as f64;
        for (b, image_labels) in labels.iter().enumerate() {
            if image_labels.is_empty() {
                continue;
            }
            for y in 0..lt.height {
                for x in 0..lt.width {
                    for (a, &(aw, ah)) in level_anchors.iter().enumerate() {
                        let idx = lt.index(b, y, x, a);
                        if lt.positive[idx] {
                            continue;
                        }
                        let prior = BBox::from_center((x as f64 + 0.5) * stride, (y as f64 + 0.5) * stride, aw, ah);
                        if image_labels.iter().any(|g| iou(&prior, &g.bbox) > ignore_threshold) {
                            lt.ignore[idx] = true;
                        }
                    }
                }
            }
        }
    }

    Ok(TargetSet {
        levels,
        batch,
        input_size,
        num_classes,
        num_objects,
        num_positive,
        collisions,
    })
}

impl TargetSet {
    /// A grid whose decoding reproduces every positive's box, with saturated
    /// objectness and class logits. Negatives get strongly negative
    /// objectness.
    pub fn ideal_grid(&self, saturation: f64) -> GridPrediction<f64> {
        let logit = |p: f64| {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            (p / (1.0 - p)).ln()
        };
        let mut grid = GridPrediction::<f64>::zeros(self.batch, self.input_size, self.num_classes);
        for (lt, lg) in self.levels.iter().zip(grid.levels.iter_mut()) {
            fill_level(lt, lg, saturation, &logit);
        }
        grid
    }
}

fn fill_level(lt: &LevelTargets, lg: &mut LevelGrid<f64>, saturation: f64, logit: &dyn Fn(f64) -> f64) {
    for i in 0..lt.positive.len() {
        let (b, y, x, a) = lt.unindex(i);
        let e = lg.entry_mut(b, y, x, a);
        if lt.positive[i] {
            let c = lt.coords[i];
            e[0] = logit(c[0]);
            e[1] = logit(c[1]);
            e[2] = c[2];
            e[3] = c[3];
            e[4] = saturation;
            e[5 + lt.category[i]] = saturation;
        } else {
            e[4] = -saturation;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::decode;

    fn anchors() -> AnchorSet {
        AnchorSet::bridge_default().scaled(0.25)
    }

    fn label(category: usize, b: BBox) -> ObjectLabel {
        ObjectLabel { category, bbox: b }
    }

    #[test]
    fn anchor_sized_box_at_cell_centre() {
        let a = anchors();
        let (w, h) = a.anchors[0];
        // level 0 has stride 8; cell (3, 5) centre is (28, 44)
        let t = build_targets(&[vec![label(2, BBox::from_center(28.0, 44.0, w, h))]], &a, 128, 4, 0.5).unwrap();
        assert_eq!(t.num_positive, 1);
        let lt = &t.levels[0];
        let idx = lt.index(0, 5, 3, 0);
        assert!(lt.positive[idx] && !lt.ignore[idx]);
        let c = lt.coords[idx];
        assert!((c[0] - 0.5).abs() < 1e-12 && (c[1] - 0.5).abs() < 1e-12);
        assert!(c[2].abs() < 1e-12 && c[3].abs() < 1e-12);
        assert_eq!(lt.category[idx], 2);
        assert_eq!(t.levels.iter().map(|l| l.positive.iter().filter(|&&p| p).count()).sum::<usize>(), 1);
    }

    #[test]
    fn distinct_best_anchors_give_one_positive_each() {
        let a = anchors();
        let labels: Vec<ObjectLabel> = (0..9)
            .map(|i| {
                let (w, h) = a.anchors[i];
                label(i % 4, BBox::from_center(64.0, 64.0, w.min(127.0), h.min(127.0)))
            })
            .collect();
        let t = build_targets(&[labels], &a, 128, 4, 0.5).unwrap();
        assert_eq!(t.num_positive, 9);
        assert_eq!(t.collisions, 0);
    }

    #[test]
    fn collision_later_label_wins() {
        let a = anchors();
        let (w, h) = a.anchors[4];
        let first = label(0, BBox::from_center(40.0, 40.0, w, h));
        let second = label(3, BBox::from_center(41.0, 42.0, w, h));
        let t = build_targets(&[vec![first, second]], &a, 128, 4, 0.5).unwrap();
        assert_eq!((t.num_objects, t.num_positive, t.collisions), (2, 1, 1));
        let (l, s) = a.locate(4);
        let lt = &t.levels[l];
        let idx = lt.index(0, 2, 2, s);
        assert_eq!(lt.owner[idx], Some(1));
        assert_eq!(lt.category[idx], 3);
    }

    #[test]
    fn masks_are_disjoint_and_ignore_marks_overlapping_priors() {
        let a = anchors();
        let (w, h) = a.anchors[8];
        // centred on a stride-32 cell so the horizontal neighbours' priors overlap by 0.53
        let t = build_targets(&[vec![label(1, BBox::from_center(80.0, 80.0, w, h))]], &a, 256, 4, 0.5).unwrap();
        let mut ignored = 0;
        for lt in &t.levels {
            for i in 0..lt.positive.len() {
                assert!(!(lt.positive[i] && lt.ignore[i]));
                ignored += lt.ignore[i] as usize;
            }
        }
        assert!(ignored > 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = anchors();
        let ok = vec![label(0, BBox::new(1.0, 1.0, 9.0, 9.0))];
        assert!(build_targets(&[ok.clone()], &a, 100, 4, 0.5).is_err());
        assert!(build_targets(&[ok], &a, 128, 0, 0.5).is_err());
        assert!(build_targets(&[vec![label(0, BBox::new(1.0, 1.0, 200.0, 9.0))]], &a, 128, 4, 0.5).is_err());
    }

    #[test]
    fn decode_of_ideal_grid_recovers_boxes() {
        let a = anchors();
        let labels = vec![
            label(0, BBox::new(3.0, 7.5, 11.0, 60.0)),
            label(3, BBox::new(70.0, 20.0, 127.0, 90.0)),
        ];
        let t = build_targets(&[labels.clone()], &a, 128, 4, 0.5).unwrap();
        let dets = decode(&t.ideal_grid(30.0), &a);
        for l in &labels {
            let best = dets[0]
                .iter()
                .filter(|d| d.confidence > 0.5)
                .map(|d| iou(&d.bbox, &l.bbox))
                .fold(0.0, f64::max);
            assert!(best > 0.999999, "{best}");
        }
    }

    proptest::proptest! {
        #[test]
        fn encode_decode_round_trip(boxes in proptest::collection::vec(
            (0.0..120.0f64, 0.0..120.0f64, 2.0..100.0f64, 2.0..100.0f64, 0usize..4), 1..6)) {
            let a = anchors();
            let labels: Vec<ObjectLabel> = boxes
                .iter()
                .map(|&(x, y, w, h, c)| label(c, BBox::new(x, y, (x + w).min(128.0), (y + h).min(128.0))))
                .collect();
            let t = build_targets(&[labels.clone()], &a, 128, 4, 0.5).unwrap();
            proptest::prop_assert_eq!(t.num_positive, t.num_objects - t.collisions);
            let grid = t.ideal_grid(30.0);
            for lt in &t.levels {
                for i in 0..lt.positive.len() {
                    if !lt.positive[i] {
                        continue;
                    }
                    let (b, y, x, s) = lt.unindex(i);
                    let l = &labels[lt.owner[i].unwrap()];
                    let li = t.levels.iter().position(|q| q.stride == lt.stride).unwrap();
                    let (bb, _, _) = crate::head::decode_entry(grid.levels[li].entry(b, y, x, s), (x, y), lt.stride as f64, a.level_anchors(li)[s]);
                    for (p, q) in bb.to_array().iter().zip(l.bbox.to_array()) {
                        proptest::prop_assert!((p - q).abs() < 1e-5, "{:?} vs {:?}", bb, l.bbox);
                    }
                }
            }
        }
    }
}
