//! Detection matching, all-point average precision and mAP at several IoU
//! thresholds.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ObjectLabel};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, Detection};

pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.5, 0.75];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    /// Indices into the input detections, highest confidence first.
    pub order: Vec<usize>,
    /// True positive flag per entry of `order`.
    pub tp: Vec<bool>,
    /// Matched ground-truth index per entry of `order`.
    pub matched: Vec<Option<usize>>,
    /// Ground truths left unmatched (false negatives).
    pub unmatched_gt: usize,
}

/// Confidence descending, ties by input index.
fn confidence_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy matching within one image: in confidence order, each detection
/// takes the unmatched same-category ground truth of highest IoU when that
/// IoU reaches `iou_threshold`; otherwise it is a false positive.
pub fn match_detections(dets: &[Detection], gts: &[ObjectLabel], iou_threshold: f64) -> MatchResult {
    let order = confidence_order(dets);
    let mut taken = vec![false; gts.len()];
    let mut tp = Vec::with_capacity(dets.len());
    let mut matched = Vec::with_capacity(dets.len());
    for &i in &order {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.category != d.category {
                continue;
            }
            let v = iou(&d.bbox, &gt.bbox);
            if v >= iou_threshold && best.map_or(true, |(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, _)) => {
                taken[g] = true;
                tp.push(true);
                matched.push(Some(g));
            }
            None => {
                tp.push(false);
                matched.push(None);
            }
        }
    }
    MatchResult {
        order,
        tp,
        matched,
        unmatched_gt: taken.iter().filter(|t| !**t).count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// All-point interpolated AP of a ranked list of TP/FP flags against
/// `num_gt` ground truths, with the raw precision/recall points.
pub fn average_precision(ranked_tp: &[bool], num_gt: usize) -> (f64, Vec<PrPoint>) {
    if num_gt == 0 {
        return (f64::NAN, Vec::new());
    }
    let mut curve = Vec::with_capacity(ranked_tp.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &hit in ranked_tp {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        curve.push(PrPoint {
            recall: tp as f64 / num_gt as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    // non-increasing envelope from the right
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in curve.iter().zip(&envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    (ap, curve)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryAp {
    pub category: usize,
    pub name: String,
    pub num_gt: usize,
    pub num_detections: usize,
    /// AP per threshold; `None` when the category has no ground truth.
    pub ap: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApResult {
    pub thresholds: Vec<f64>,
    pub per_category: Vec<CategoryAp>,
    /// Mean over categories present in the ground truth, per threshold.
    pub map: Vec<f64>,
    pub images: usize,
}

impl ApResult {
    /// mAP at `threshold`, if it was evaluated.
    pub fn map_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| (t - threshold).abs() < 1e-12)
            .map(|i| self.map[i])
    }

    /// `{"per_class": {name: {"ap50": f, ...}}, "map50": f, ..., "counts": {...}}`.
    pub fn to_json(&self) -> serde_json::Value {
        let key = |t: f64| format!("{}", (t * 100.0).round() as i64);
        let mut per_class = serde_json::Map::new();
        let mut gt_counts = serde_json::Map::new();
        let mut det_counts = serde_json::Map::new();
        for c in &self.per_category {
            let mut m = serde_json::Map::new();
            for (t, ap) in self.thresholds.iter().zip(&c.ap) {
                m.insert(format!("ap{}", key(*t)), serde_json::json!(ap));
            }
            per_class.insert(c.name.clone(), serde_json::Value::Object(m));
            gt_counts.insert(c.name.clone(), c.num_gt.into());
            det_counts.insert(c.name.clone(), c.num_detections.into());
        }
        let mut out = serde_json::Map::new();
        out.insert("per_class".into(), serde_json::Value::Object(per_class));
        for (t, m) in self.thresholds.iter().zip(&self.map) {
            out.insert(format!("map{}", key(*t)), serde_json::json!(m));
        }
        out.insert(
            "counts".into(),
            serde_json::json!({
                "images": self.images,
                "ground_truth": gt_counts,
                "detections": det_counts,
            }),
        );
        serde_json::Value::Object(out)
    }
}

/// Per-category AP and mAP for every threshold. `detections[i]` belongs to
/// `dataset.records[i]`.
pub fn mean_ap(detections: &[Vec<Detection>], dataset: &Dataset, thresholds: &[f64]) -> Result<ApResult> {
    if detections.len() != dataset.len() {
        return Err(Error::invalid(format!(
            "{} detection lists for {} images",
            detections.len(),
            dataset.len()
        )));
    }
    if dataset.num_labels() == 0 {
        return Err(Error::invalid("ground truth has no objects"));
    }
    let k = dataset.num_categories();
    if let Some(d) = detections.iter().flatten().find(|d| d.category >= k) {
        return Err(Error::invalid(format!("detection category {} outside the {k}-entry table", d.category)));
    }
    let mut num_gt = vec![0usize; k];
    for r in &dataset.records {
        for l in &r.labels {
            num_gt[l.category] += 1;
        }
    }
    let mut num_det = vec![0usize; k];
    for d in detections.iter().flatten() {
        num_det[d.category] += 1;
    }

    let mut per_threshold = Vec::with_capacity(thresholds.len());
    for &thr in thresholds {
        // (confidence, image, rank in image, tp) per category
        let mut ranked: Vec<Vec<(f64, usize, usize, bool)>> = vec![Vec::new(); k];
        for (img, (dets, rec)) in detections.iter().zip(&dataset.records).enumerate() {
            let m = match_detections(dets, &rec.labels, thr);
            for (rank, (&i, &hit)) in m.order.iter().zip(&m.tp).enumerate() {
                let d = &dets[i];
                ranked[d.category].push((d.confidence, img, rank, hit));
            }
        }
        let aps: Vec<Option<f64>> = ranked
            .iter_mut()
            .enumerate()
            .map(|(c, list)| {
                if num_gt[c] == 0 {
                    return None;
                }
                list.sort_by(|a, b| match b.0.total_cmp(&a.0) {
                    Ordering::Equal => (a.1, a.2).cmp(&(b.1, b.2)),
                    o => o,
                });
                let flags: Vec<bool> = list.iter().map(|e| e.3).collect();
                Some(average_precision(&flags, num_gt[c]).0)
            })
            .collect();
        per_threshold.push(aps);
    }

    let per_category = (0..k)
        .map(|c| CategoryAp {
            category: c,
            name: dataset.categories[c].clone(),
            num_gt: num_gt[c],
            num_detections: num_det[c],
            ap: per_threshold.iter().map(|aps| aps[c]).collect(),
        })
        .collect();
    let map = per_threshold
        .iter()
        .map(|aps| {
            let present: Vec<f64> = aps.iter().flatten().copied().collect();
            present.iter().sum::<f64>() / present.len() as f64
        })
        .collect();
    Ok(ApResult {
        thresholds: thresholds.to_vec(),
        per_category,
        map,
        images: dataset.len(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DetectionJson {
    category: String,
    bbox: [f64; 4],
    score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ImageDetectionsJson {
    image: String,
    detections: Vec<DetectionJson>,
}

/// Writes `{"image": str, "detections": [{"category", "bbox", "score"}]}`
/// lines, one per image of `dataset`.
pub fn save_detections(path: &Path, dataset: &Dataset, detections: &[Vec<Detection>]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (rec, dets) in dataset.records.iter().zip(detections) {
        let line = ImageDetectionsJson {
            image: rec.image.clone(),
            detections: dets
                .iter()
                .map(|d| DetectionJson {
                    category: dataset.categories[d.category].clone(),
                    bbox: d.bbox.to_array(),
                    score: d.confidence,
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a detections file and aligns it with `dataset` by image name;
/// images without a line get no detections.
pub fn load_detections(path: &Path, dataset: &Dataset) -> Result<Vec<Vec<Detection>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let index: HashMap<&str, usize> = dataset
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.image.as_str(), i))
        .collect();
    let mut out = vec![Vec::new(); dataset.len()];
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ImageDetectionsJson = serde_json::from_str(&line).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        let Some(&i) = index.get(parsed.image.as_str()) else {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line: n + 1,
                message: format!("image `{}` is not in the ground truth", parsed.image),
            });
        };
        for d in parsed.detections {
            let b = d.bbox;
            out[i].push(Detection {
                bbox: BBox::new(b[0], b[1], b[2], b[3]),
                category: dataset.category_id(&d.category)?,
                confidence: d.score,
            });
        }
    }
    Ok(out)
}

/// Per-category counts, handy for reports.
pub fn category_counts(dataset: &Dataset) -> BTreeMap<String, usize> {
    let mut out: BTreeMap<String, usize> = dataset.categories.iter().map(|c| (c.clone(), 0)).collect();
    for r in &dataset.records {
        for l in &r.labels {
            *out.get_mut(&dataset.categories[l.category]).expect("known category") += 1;
        }
    }
    out
}
