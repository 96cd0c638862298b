use serde::Serialize;

use super::Dataset;
use crate::error::{Error, Result};

pub const HIST_BINS: usize = 16;
/// Relative object area (object area / image area) covered by the histogram.
pub const SCALE_RANGE: (f64, f64) = (1e-4, 1.0);
/// Width / height ratio covered by the histogram.
pub const ASPECT_RANGE: (f64, f64) = (1.0 / 16.0, 16.0);

const QUANTILES: [f64; 7] = [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0];

/// Joint histogram over (log relative area, log aspect ratio), normalized to
/// unit mass. Row index is the scale bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleAspectHistogram {
    pub scale_bins: usize,
    pub aspect_bins: usize,
    pub scale_range: (f64, f64),
    pub aspect_range: (f64, f64),
    pub mass: Vec<f64>,
}

fn log_bin(v: f64, (lo, hi): (f64, f64), bins: usize) -> usize {
    if !(v > lo) {
        return 0;
    }
    let t = (v.ln() - lo.ln()) / (hi.ln() - lo.ln());
    ((t * bins as f64).floor() as isize).clamp(0, bins as isize - 1) as usize
}

impl ScaleAspectHistogram {
    pub fn empty() -> Self {
        ScaleAspectHistogram {
            scale_bins: HIST_BINS,
            aspect_bins: HIST_BINS,
            scale_range: SCALE_RANGE,
            aspect_range: ASPECT_RANGE,
            mass: vec![0.0; HIST_BINS * HIST_BINS],
        }
    }

    /// Adds one observation; values outside the ranges land in the edge bins.
    pub fn add(&mut self, relative_area: f64, aspect: f64) {
        let s = log_bin(relative_area, self.scale_range, self.scale_bins);
        let a = if aspect.is_nan() {
            self.aspect_bins / 2
        } else {
            log_bin(aspect, self.aspect_range, self.aspect_bins)
        };
        self.mass[s * self.aspect_bins + a] += 1.0;
    }

    fn normalize(&mut self) {
        let total: f64 = self.mass.iter().sum();
        if total > 0.0 {
            self.mass.iter_mut().for_each(|m| *m /= total);
        }
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.scale_bins == other.scale_bins
            && self.aspect_bins == other.aspect_bins
            && self.scale_range == other.scale_range
            && self.aspect_range == other.aspect_range
            && self.mass.len() == other.mass.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub categories: Vec<String>,
    pub counts: Vec<usize>,
    pub fractions: Vec<f64>,
    pub total_objects: usize,
    pub images: usize,
    /// `(q, value)` pairs of the relative object area distribution.
    pub relative_area_quantiles: Vec<(f64, f64)>,
    pub median_relative_area: f64,
    pub histogram: ScaleAspectHistogram,
}

/// Linear-interpolation quantile of a sorted slice (midpoint rule for the
/// median of an even count).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * t
}

fn stats_for(dataset: &Dataset, filter: Option<usize>) -> Result<DatasetStats> {
    if dataset.is_empty() {
        return Err(Error::invalid("statistics of an empty dataset"));
    }
    let mut counts = vec![0usize; dataset.num_categories()];
    let mut areas = Vec::new();
    let mut hist = ScaleAspectHistogram::empty();
    for r in &dataset.records {
        let image_area = r.width as f64 * r.height as f64;
        for l in &r.labels {
            if filter.is_some_and(|c| c != l.category) {
                continue;
            }
            counts[l.category] += 1;
            let rel = l.bbox.area() / image_area;
            let (w, h) = (l.bbox.width(), l.bbox.height());
            let aspect = if w == 0.0 && h == 0.0 { 1.0 } else { w / h };
            areas.push(rel);
            hist.add(rel, aspect);
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::invalid("dataset has no labels"));
    }
    hist.normalize();
    areas.sort_by(f64::total_cmp);
    Ok(DatasetStats {
        categories: dataset.categories.clone(),
        fractions: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        counts,
        total_objects: total,
        images: dataset.len(),
        relative_area_quantiles: QUANTILES.iter().map(|&q| (q, quantile(&areas, q))).collect(),
        median_relative_area: quantile(&areas, 0.5),
        histogram: hist,
    })
}

pub fn compute_stats(dataset: &Dataset) -> Result<DatasetStats> {
    stats_for(dataset, None)
}

/// Statistics restricted to each category that has at least one label.
pub fn compute_stats_per_category(dataset: &Dataset) -> Result<Vec<(usize, DatasetStats)>> {
    let mut present = vec![false; dataset.num_categories()];
    for r in &dataset.records {
        for l in &r.labels {
            present[l.category] = true;
        }
    }
    present
        .iter()
        .enumerate()
        .filter(|&(_, &p)| p)
        .map(|(c, _)| stats_for(dataset, Some(c)).map(|s| (c, s)))
        .collect()
}

/// Hellinger distance between two histograms on the same grid, in `[0, 1]`.
pub fn hellinger(p: &ScaleAspectHistogram, q: &ScaleAspectHistogram) -> Result<f64> {
    if !p.same_grid(q) {
        return Err(Error::invalid("histograms use different bin grids"));
    }
    let bc: f64 = p.mass.iter().zip(&q.mass).map(|(a, b)| (a * b).sqrt()).sum();
    Ok((1.0 - bc).max(0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceRank {
    pub category: usize,
    pub name: String,
    pub distance: f64,
}

/// Orders source categories by the Hellinger distance of their joint
/// scale/aspect histogram to the target's (closest first, ties by id).
pub fn rank_source_classes(
    source: &[(usize, DatasetStats)],
    target: &DatasetStats,
) -> Result<Vec<SourceRank>> {
    let mut ranked = source
        .iter()
        .map(|(c, s)| {
            Ok(SourceRank {
                category: *c,
                name: s.categories.get(*c).cloned().unwrap_or_default(),
                distance: hellinger(&s.histogram, &target.histogram)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.category.cmp(&b.category)));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ImageRecord, ObjectLabel};
    use crate::geometry::BBox;

    fn one_object(w: u32, h: u32, b: BBox, category: usize) -> Dataset {
        let mut ds = Dataset::new(crate::dataset::default_categories());
        let mut r = ImageRecord::new("x", w, h);
        r.labels.push(ObjectLabel { category, bbox: b });
        ds.records.push(r);
        ds
    }

    #[test]
    fn relative_area_of_single_object() {
        let ds = one_object(1280, 960, BBox::new(100.0, 100.0, 164.0, 148.0), 0);
        let s = compute_stats(&ds).unwrap();
        assert!((s.median_relative_area - 0.0025).abs() < 1e-15);
        assert_eq!(s.counts, vec![1, 0, 0, 0]);
        assert_eq!(s.fractions, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn identical_objects_have_zero_spread() {
        let mut ds = one_object(100, 100, BBox::new(0.0, 0.0, 10.0, 20.0), 1);
        let r = ds.records[0].clone();
        ds.records.push(r.clone());
        ds.records.push(r);
        let s = compute_stats(&ds).unwrap();
        let first = s.relative_area_quantiles[0].1;
        assert!(s.relative_area_quantiles.iter().all(|&(_, v)| v == first));
    }

    #[test]
    fn median_even_count_is_midpoint() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 10.0], 0.5), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0], 0.5), 2.0);
    }

    #[test]
    fn no_labels_is_an_error() {
        let mut ds = Dataset::new(vec!["a".into()]);
        ds.records.push(ImageRecord::new("x", 4, 4));
        assert!(compute_stats(&ds).is_err());
        assert!(compute_stats(&Dataset::new(vec![])).is_err());
    }

    #[test]
    fn fractions_and_histogram_are_normalized() {
        let mut ds = Dataset::new(crate::dataset::default_categories());
        let mut r = ImageRecord::new("x", 200, 100);
        for (i, c) in [0, 1, 1, 3, 2, 3, 3].into_iter().enumerate() {
            let x = i as f64 * 10.0;
            r.labels.push(ObjectLabel {
                category: c,
                bbox: BBox::new(x, 0.0, x + 5.0 + i as f64, 3.0 + 10.0 * i as f64),
            });
        }
        ds.records.push(r);
        let s = compute_stats(&ds).unwrap();
        assert!((s.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(s.counts.iter().sum::<usize>(), 7);
        assert!((s.histogram.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hellinger_extremes() {
        let mut p = ScaleAspectHistogram::empty();
        let mut q = ScaleAspectHistogram::empty();
        p.mass[0] = 1.0;
        q.mass[5] = 1.0;
        assert_eq!(hellinger(&p, &p).unwrap(), 0.0);
        assert_eq!(hellinger(&p, &q).unwrap(), 1.0);
        let mut bad = ScaleAspectHistogram::empty();
        bad.scale_bins = 8;
        assert!(hellinger(&p, &bad).is_err());
    }

    #[test]
    fn hellinger_symmetric_under_mirroring() {
        // Target puts equal mass on two bins; mirrored sources swap one bin
        // for its mirror image and must be equally far away.
        let mut target = ScaleAspectHistogram::empty();
        target.mass[3] = 0.5;
        target.mass[12] = 0.5;
        let mut a = ScaleAspectHistogram::empty();
        a.mass[3] = 0.8;
        a.mass[7] = 0.2;
        let mut b = ScaleAspectHistogram::empty();
        b.mass[12] = 0.8;
        b.mass[8] = 0.2;
        let da = hellinger(&a, &target).unwrap();
        let db = hellinger(&b, &target).unwrap();
        assert!((da - db).abs() < 1e-15);
        assert_eq!(da, hellinger(&target, &a).unwrap());
    }

    #[test]
    fn ranking_puts_identical_source_first() {
        let target = compute_stats(&one_object(100, 100, BBox::new(0.0, 0.0, 10.0, 10.0), 0)).unwrap();
        let near = compute_stats(&one_object(100, 100, BBox::new(5.0, 5.0, 15.0, 15.0), 2)).unwrap();
        let far = compute_stats(&one_object(100, 100, BBox::new(0.0, 0.0, 90.0, 5.0), 1)).unwrap();
        let ranked = rank_source_classes(&[(1, far), (2, near)], &target).unwrap();
        assert_eq!(ranked[0].category, 2);
        assert_eq!(ranked[0].distance, 0.0);
        assert_eq!(ranked[1].distance, 1.0);
        assert_eq!(ranked[0].name, "spalling");
    }
}
