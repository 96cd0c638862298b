//! Anchor priors from k-means over ground-truth box dimensions with
//! `1 - IoU` as the distance, and their assignment to pyramid levels.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::wh_iou;

/// Strides of the three pyramid levels, finest first.
pub const LEVEL_STRIDES: [u32; 3] = [8, 16, 32];

/// Multi-scale training sizes as published (540 and 572 are not multiples of 32).
pub const PAPER_SIZES: [u32; 7] = [416, 448, 480, 512, 540, 572, 608];

/// Anchors reported for the bridge inspection dataset, `(w, h)` in pixels.
pub const BRIDGE_ANCHORS: [(f64, f64); 9] = [
    (29.0, 22.0),
    (30.0, 95.0),
    (97.0, 37.0),
    (39.0, 267.0),
    (105.0, 101.0),
    (290.0, 59.0),
    (227.0, 139.0),
    (126.0, 282.0),
    (411.0, 209.0),
];

/// `k` anchors sorted by area (ascending) and split into three equal groups;
/// `levels[0]` belongs to the stride-8 level, `levels[2]` to stride 32.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub anchors: Vec<(f64, f64)>,
    pub levels: Vec<Vec<usize>>,
}

impl AnchorSet {
    pub fn per_level(&self) -> usize {
        self.anchors.len() / 3
    }

    pub fn level_anchors(&self, level: usize) -> Vec<(f64, f64)> {
        self.levels[level].iter().map(|&i| self.anchors[i]).collect()
    }

    /// `(level, slot)` of a global anchor index.
    pub fn locate(&self, index: usize) -> (usize, usize) {
        for (l, members) in self.levels.iter().enumerate() {
            if let Some(s) = members.iter().position(|&i| i == index) {
                return (l, s);
            }
        }
        unreachable!("anchor index {index} not assigned to a level")
    }

    pub fn bridge_default() -> Self {
        assign_scales(&BRIDGE_ANCHORS).expect("nine anchors")
    }

    pub fn scaled(&self, factor: f64) -> Self {
        AnchorSet {
            anchors: self.anchors.iter().map(|&(w, h)| (w * factor, h * factor)).collect(),
            levels: self.levels.clone(),
        }
    }
}

/// Sorts anchors by `(area, w, h, input index)` and splits them into thirds.
pub fn assign_scales(anchors: &[(f64, f64)]) -> Result<AnchorSet> {
    if anchors.is_empty() || anchors.len() % 3 != 0 {
        return Err(Error::invalid(format!(
            "anchor count {} is not a positive multiple of 3",
            anchors.len()
        )));
    }
    let mut order: Vec<usize> = (0..anchors.len()).collect();
    order.sort_by(|&a, &b| {
        let (wa, ha) = anchors[a];
        let (wb, hb) = anchors[b];
        (wa * ha)
            .total_cmp(&(wb * hb))
            .then(wa.total_cmp(&wb))
            .then(ha.total_cmp(&hb))
            .then(a.cmp(&b))
    });
    let sorted: Vec<(f64, f64)> = order.iter().map(|&i| anchors[i]).collect();
    let per = anchors.len() / 3;
    let levels = (0..3).map(|l| (l * per..(l + 1) * per).collect()).collect();
    Ok(AnchorSet {
        anchors: sorted,
        levels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KMeansResult {
    pub centroids: Vec<(f64, f64)>,
    /// `sum(1 - best IoU)` over all points at the returned centroids.
    pub objective: f64,
    /// Best objective so far after every update.
    pub history: Vec<f64>,
    pub iterations: usize,
}

/// Best IoU of `p` against `centroids` and the index achieving it (lowest on ties).
fn best_match(p: (f64, f64), centroids: &[(f64, f64)]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &c) in centroids.iter().enumerate() {
        let v = wh_iou(p, c);
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

pub fn objective(points: &[(f64, f64)], centroids: &[(f64, f64)]) -> f64 {
    points.iter().map(|&p| 1.0 - best_match(p, centroids).1).sum()
}

fn assign(points: &[(f64, f64)], centroids: &[(f64, f64)]) -> (Vec<usize>, Vec<f64>, f64) {
    let mut labels = Vec::with_capacity(points.len());
    let mut best = Vec::with_capacity(points.len());
    let mut obj = 0.0;
    for &p in points {
        let (i, v) = best_match(p, centroids);
        labels.push(i);
        best.push(v);
        obj += 1.0 - v;
    }
    (labels, best, obj)
}

fn distinct_count(points: &[(f64, f64)]) -> usize {
    let mut v: Vec<(f64, f64)> = points.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    v.dedup();
    v.len()
}

/// D²-weighted seeding under the `1 - IoU` distance.
fn seed_centroids(points: &[(f64, f64)], k: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())]];
    while centroids.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|&p| (1.0 - best_match(p, &centroids).1).powi(2))
            .collect();
        let next = match WeightedIndex::new(&weights) {
            Ok(dist) => points[dist.sample(rng)],
            // Every point already coincides with a centroid.
            Err(_) => *points.iter().find(|p| !centroids.contains(p)).unwrap_or(&points[0]),
        };
        centroids.push(next);
    }
    centroids
}

/// Plain k-means on `(w, h)` pairs; `k` need not be a multiple of 3 here.
///
/// Centroids are member means, iterated until the assignments stop
/// changing. A mean is not the IoU-optimal centre of its members, so an
/// update can score worse than the one before. The best centroids after
/// the first update are returned and `history` tracks that running best.
pub fn kmeans_wh(points: &[(f64, f64)], k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if distinct_count(points) < k {
        return Err(Error::invalid(format!(
            "{} distinct boxes cannot form {k} clusters",
            distinct_count(points)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let (mut labels, mut best, obj) = assign(points, &centroids);
    let (mut best_obj, mut best_centroids) = (obj, centroids.clone());
    let mut history = Vec::new();
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (&p, &l) in points.iter().zip(&labels) {
            sums[l].0 += p.0;
            sums[l].1 += p.1;
            sums[l].2 += 1;
        }
        let mut updated = centroids.clone();
        let mut taken: Vec<usize> = Vec::new();
        for (c, &(sw, sh, n)) in sums.iter().enumerate() {
            if n > 0 {
                updated[c] = (sw / n as f64, sh / n as f64);
            } else {
                // Empty cluster: move it onto the worst-served point.
                let worst = (0..points.len())
                    .filter(|i| !taken.contains(i))
                    .min_by(|&a, &b| best[a].total_cmp(&best[b]).then(a.cmp(&b)))
                    .expect("more points than clusters");
                taken.push(worst);
                updated[c] = points[worst];
            }
        }
        let (new_labels, new_best, new_obj) = assign(points, &updated);
        let converged = new_labels == labels;
        centroids = updated;
        labels = new_labels;
        best = new_best;
        // seeds are data points and never returned once an update exists
        if iterations == 1 || new_obj < best_obj {
            best_obj = new_obj;
            best_centroids = centroids.clone();
        }
        history.push(best_obj);
        if converged {
            break;
        }
    }
    Ok(KMeansResult {
        centroids: best_centroids,
        objective: best_obj,
        history,
        iterations,
    })
}

/// Every label's `(w, h)` letterbox-scaled to each size in `sizes`, pooled.
pub fn pooled_dimensions(dataset: &Dataset, sizes: &[u32]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(dataset.num_labels() * sizes.len());
    for &size in sizes {
        for r in &dataset.records {
            let s = size as f64 / r.width.max(r.height) as f64;
            for l in &r.labels {
                out.push((l.bbox.width() * s, l.bbox.height() * s));
            }
        }
    }
    out
}

pub fn kmeans_anchors(
    dataset: &Dataset,
    k: usize,
    sizes: &[u32],
    seed: u64,
    max_iter: usize,
) -> Result<(AnchorSet, KMeansResult)> {
    if k == 0 || k % 3 != 0 {
        return Err(Error::invalid(format!("k = {k} is not divisible by 3")));
    }
    if sizes.is_empty() {
        return Err(Error::invalid("no input sizes given"));
    }
    if dataset.num_labels() < k {
        return Err(Error::invalid(format!(
            "{} labels cannot form {k} clusters",
            dataset.num_labels()
        )));
    }
    let points = pooled_dimensions(dataset, sizes);
    let result = kmeans_wh(&points, k, seed, max_iter)?;
    Ok((assign_scales(&result.centroids)?, result))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnchorQuality {
    pub avg_best_iou: f64,
    pub recall_at_05: f64,
}

/// Mean best IoU and fraction of ground truths with best IoU ≥ 0.5, with
/// every ground truth letterbox-scaled to `size`.
pub fn anchor_quality(anchors: &AnchorSet, dataset: &Dataset, size: u32) -> AnchorQuality {
    quality_of_points(&anchors.anchors, &pooled_dimensions(dataset, &[size]))
}

pub fn quality_of_points(anchors: &[(f64, f64)], points: &[(f64, f64)]) -> AnchorQuality {
    if points.is_empty() || anchors.is_empty() {
        return AnchorQuality {
            avg_best_iou: 0.0,
            recall_at_05: 0.0,
        };
    }
    let (mut sum, mut hits) = (0.0, 0usize);
    for &p in points {
        let b = best_match(p, anchors).1;
        sum += b;
        if b >= 0.5 {
            hits += 1;
        }
    }
    AnchorQuality {
        avg_best_iou: sum / points.len() as f64,
        recall_at_05: hits as f64 / points.len() as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ImageRecord, ObjectLabel};
    use crate::geometry::BBox;

    #[test]
    fn single_cluster_identical_points() {
        let pts = vec![(12.0, 7.0); 5];
        let r = kmeans_wh(&pts, 1, 0, 50).unwrap();
        assert_eq!(r.centroids, vec![(12.0, 7.0)]);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn single_cluster_mean() {
        let r = kmeans_wh(&[(10.0, 10.0), (30.0, 30.0)], 1, 3, 50).unwrap();
        assert_eq!(r.centroids, vec![(20.0, 20.0)]);
    }

    #[test]
    fn too_few_distinct_points() {
        assert!(kmeans_wh(&[(1.0, 1.0), (1.0, 1.0)], 2, 0, 10).is_err());
    }

    #[test]
    fn k_must_divide_by_three() {
        let mut ds = Dataset::new(vec!["a".into()]);
        let mut r = ImageRecord::new("x", 100, 100);
        for i in 0..10 {
            r.labels.push(ObjectLabel {
                category: 0,
                bbox: BBox::new(0.0, 0.0, 5.0 + i as f64, 9.0),
            });
        }
        ds.records.push(r);
        assert!(kmeans_anchors(&ds, 4, &[100], 0, 10).is_err());
        assert!(kmeans_anchors(&ds, 3, &[], 0, 10).is_err());
        let (set, _) = kmeans_anchors(&ds, 3, &[100, 200], 0, 100).unwrap();
        assert_eq!(set.anchors.len(), 3);
    }

    #[test]
    fn bridge_anchors_split_by_area() {
        let set = AnchorSet::bridge_default();
        assert_eq!(
            set.level_anchors(0),
            vec![(29.0, 22.0), (30.0, 95.0), (97.0, 37.0)]
        );
        assert_eq!(
            set.level_anchors(2),
            vec![(227.0, 139.0), (126.0, 282.0), (411.0, 209.0)]
        );
        let mut permuted = BRIDGE_ANCHORS.to_vec();
        permuted.reverse();
        permuted.swap(1, 6);
        assert_eq!(assign_scales(&permuted).unwrap(), set);
    }

    #[test]
    fn equal_area_tie_break() {
        let anchors: Vec<(f64, f64)> = [(4.0, 9.0), (6.0, 6.0), (9.0, 4.0), (3.0, 12.0), (12.0, 3.0), (2.0, 18.0), (18.0, 2.0), (1.0, 36.0), (36.0, 1.0)].to_vec();
        let set = assign_scales(&anchors).unwrap();
        let widths: Vec<f64> = set.anchors.iter().map(|a| a.0).collect();
        assert_eq!(widths, vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0, 12.0, 18.0, 36.0]);
        let mut shuffled = anchors.clone();
        shuffled.rotate_left(4);
        assert_eq!(assign_scales(&shuffled).unwrap(), set);
    }

    #[test]
    fn quality_fixtures() {
        let q = quality_of_points(&[(10.0, 10.0)], &[(20.0, 20.0)]);
        assert_eq!(q.avg_best_iou, 0.25);
        assert_eq!(q.recall_at_05, 0.0);
        let pts = [(3.0, 4.0), (10.0, 2.0), (3.0, 4.0)];
        let q = quality_of_points(&[(3.0, 4.0), (10.0, 2.0)], &pts);
        assert_eq!((q.avg_best_iou, q.recall_at_05), (1.0, 1.0));
    }

    proptest::proptest! {
        #[test]
        fn objective_history_non_increasing(
            pts in proptest::collection::vec((1.0..200.0f64, 1.0..200.0f64), 12..60),
            k in 1usize..7, seed in 0u64..500,
        ) {
            let r = kmeans_wh(&pts, k, seed, 100).unwrap();
            for w in r.history.windows(2) {
                proptest::prop_assert!(w[1] <= w[0]);
            }
            proptest::prop_assert!((objective(&pts, &r.centroids) - r.objective).abs() < 1e-9);
        }
    }
}
