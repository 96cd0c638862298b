//! Annotated image collections.

mod codec;
mod split;
mod stats;

use std::path::{Path, PathBuf};
use std::sync::Arc;

pub use codec::{load, load_jsonl, load_voc, save, save_jsonl, save_voc, CategorySpec, Format};
pub use split::{partition, PartitionMode, Split};
pub use stats::{
    compute_stats, compute_stats_per_category, hellinger, rank_source_classes, DatasetStats,
    ScaleAspectHistogram, SourceRank, ASPECT_RANGE, HIST_BINS, SCALE_RANGE,
};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::raster::Raster;

/// Category table used when nothing else is specified.
pub const DEFAULT_CATEGORIES: [&str; 4] = ["crack", "pop-out", "spalling", "exposed rebar"];

pub fn default_categories() -> Vec<String> {
    DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectLabel {
    pub category: usize,
    pub bbox: BBox,
}

/// One annotated image. `raster` is an optional in-memory copy of the pixels;
/// it is a cache and does not take part in equality.
#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub labels: Vec<ObjectLabel>,
    pub raster: Option<Arc<Raster>>,
}

impl PartialEq for ImageRecord {
    fn eq(&self, other: &Self) -> bool {
        self.image == other.image
            && self.width == other.width
            && self.height == other.height
            && self.labels == other.labels
    }
}

impl ImageRecord {
    pub fn new(image: impl Into<String>, width: u32, height: u32) -> Self {
        ImageRecord {
            image: image.into(),
            width,
            height,
            labels: Vec::new(),
            raster: None,
        }
    }

    pub fn with_raster(image: impl Into<String>, raster: Raster) -> Self {
        let (width, height) = (raster.width(), raster.height());
        ImageRecord {
            image: image.into(),
            width,
            height,
            labels: Vec::new(),
            raster: Some(Arc::new(raster)),
        }
    }

    /// Category with the most labels in this image, lowest id on ties.
    pub fn dominant_category(&self) -> Option<usize> {
        let max_cat = self.labels.iter().map(|l| l.category).max()?;
        let mut counts = vec![0usize; max_cat + 1];
        for l in &self.labels {
            counts[l.category] += 1;
        }
        let mut best = 0;
        for (c, &n) in counts.iter().enumerate() {
            if n > counts[best] {
                best = c;
            }
        }
        Some(best)
    }

    /// Returns the pixels, from the in-memory copy if present or from disk.
    pub fn load_raster(&self, base_dir: Option<&Path>) -> Result<Arc<Raster>> {
        if let Some(r) = &self.raster {
            return Ok(Arc::clone(r));
        }
        let p = Path::new(&self.image);
        let path = match base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        };
        let raster = Raster::load(&path)?;
        if raster.width() != self.width || raster.height() != self.height {
            return Err(Error::invalid(format!(
                "{}: raster is {}x{}, annotation says {}x{}",
                path.display(),
                raster.width(),
                raster.height(),
                self.width,
                self.height
            )));
        }
        Ok(Arc::new(raster))
    }

    /// Clamps every label into the image frame, returning how many changed.
    pub fn clamp_labels(&mut self) -> usize {
        let (w, h) = (self.width as f64, self.height as f64);
        let mut changed = 0;
        for l in &mut self.labels {
            let c = l.bbox.clip(w, h);
            if c != l.bbox {
                l.bbox = c;
                changed += 1;
            }
        }
        changed
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<ImageRecord>,
    pub categories: Vec<String>,
    /// Directory relative image paths are resolved against.
    pub base_dir: Option<PathBuf>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records && self.categories == other.categories
    }
}

impl Dataset {
    pub fn new(categories: Vec<String>) -> Self {
        Dataset {
            records: Vec::new(),
            categories,
            base_dir: None,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn num_labels(&self) -> usize {
        self.records.iter().map(|r| r.labels.len()).sum()
    }

    pub fn category_id(&self, name: &str) -> Result<usize> {
        self.categories
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownCategory {
                name: name.to_string(),
                known: self.categories.clone(),
            })
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            categories: self.categories.clone(),
            base_dir: self.base_dir.clone(),
        }
    }

    pub fn raster(&self, index: usize) -> Result<Arc<Raster>> {
        self.records[index].load_raster(self.base_dir.as_deref())
    }

    /// Keeps only labels of `keep` (in that order, remapped to 0..keep.len());
    /// images left without labels are dropped.
    pub fn select_categories(&self, keep: &[usize]) -> Dataset {
        let categories = keep.iter().map(|&c| self.categories[c].clone()).collect();
        let records = self
            .records
            .iter()
            .filter_map(|r| {
                let labels: Vec<ObjectLabel> = r
                    .labels
                    .iter()
                    .filter_map(|l| {
                        keep.iter().position(|&k| k == l.category).map(|new| ObjectLabel {
                            category: new,
                            bbox: l.bbox,
                        })
                    })
                    .collect();
                (!labels.is_empty()).then(|| ImageRecord {
                    labels,
                    ..r.clone()
                })
            })
            .collect();
        Dataset {
            records,
            categories,
            base_dir: self.base_dir.clone(),
        }
    }

    /// Checks the structural invariants: positive sizes, known categories,
    /// boxes inside the frame.
    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            if r.width == 0 || r.height == 0 {
                return Err(Error::invalid(format!("{}: zero-sized image", r.image)));
            }
            for l in &r.labels {
                if l.category >= self.categories.len() {
                    return Err(Error::invalid(format!(
                        "{}: category id {} >= {}",
                        r.image,
                        l.category,
                        self.categories.len()
                    )));
                }
                if !l.bbox.is_valid() || !l.bbox.is_inside(r.width as f64, r.height as f64) {
                    return Err(Error::invalid(format!(
                        "{}: box {:?} outside {}x{}",
                        r.image, l.bbox, r.width, r.height
                    )));
                }
            }
        }
        Ok(())
    }
}
