use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{DetectorModel, ModelConfig};
use super::schedule::LrSchedule;
use crate::anchors::AnchorSet;
use crate::augment::{augment_pipeline, stream_rng, AugmentConfig, Sample};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{mean_ap, ApResult, DEFAULT_THRESHOLDS};
use crate::head::{build_targets, image_to_tensor, predict_batch, total_loss, LossBreakdown, LossConfig, PredictConfig};
use crate::nn::{Adam, AdamConfig, Checkpoint, Module, NormMode, Phase};
use crate::raster::Raster;

/// Seven multi-scale training sizes. 540 and 572 are moved to the nearest
/// multiples of 32.
pub const TOY_MS_SIZES: [u32; 7] = [416, 448, 480, 512, 544, 576, 608];
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const DIAGNOSTIC_CHECKPOINT: &str = "diagnostic.sddk";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub schedule: LrSchedule,
    /// Input sides drawn uniformly per batch. Sides that are not multiples
    /// of 32 are floored to one.
    pub sizes: Vec<u32>,
    pub seed: u64,
    pub loss: LossConfig,
    pub norm: NormMode,
    pub width_multiplier: usize,
    /// Branch probabilities and ranges; the target size is set per batch.
    pub augment: AugmentConfig,
    /// Validate every this many epochs (and after the last); 0 disables.
    pub val_every: usize,
    pub val_size: u32,
    pub val_conf_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 80,
            batch_size: 2,
            adam: AdamConfig::default(),
            schedule: LrSchedule::staged(),
            sizes: TOY_MS_SIZES.to_vec(),
            seed: 0,
            loss: LossConfig::default(),
            norm: NormMode::renorm(),
            width_multiplier: 1,
            augment: AugmentConfig::default(),
            val_every: 5,
            val_size: 512,
            val_conf_threshold: 0.01,
        }
    }
}

impl TrainConfig {
    /// Small-input preset: given epochs with the staged schedule rescaled,
    /// one fixed side for training and validation.
    pub fn toy(epochs: usize, size: u32, seed: u64) -> Result<Self> {
        Ok(TrainConfig {
            epochs,
            schedule: LrSchedule::staged().scaled_to(epochs)?,
            sizes: vec![size],
            val_size: size,
            seed,
            ..TrainConfig::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        self.schedule.validate(self.epochs)?;
        if self.sizes.is_empty() || self.sizes.iter().any(|&s| s < 32) {
            return Err(Error::invalid("training sizes must be at least 32"));
        }
        if self.val_size < 32 {
            return Err(Error::invalid("validation size must be at least 32"));
        }
        if self.width_multiplier == 0 {
            return Err(Error::invalid("width multiplier must be at least 1"));
        }
        let a = AugmentConfig {
            target_size: 32,
            ..self.augment.clone()
        };
        a.validate()
    }

    pub fn model_config(&self, num_classes: usize) -> ModelConfig {
        ModelConfig::new(num_classes, self.width_multiplier, self.norm)
    }
}

/// Network side actually used for a configured size: grids use floor
/// division by the coarsest stride.
pub fn effective_size(size: u32) -> u32 {
    (size / 32).max(1) * 32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub phase: String,
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub images: usize,
    pub loss: f64,
    pub confidence: f64,
    pub classification: f64,
    pub localization: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map50: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map75: Option<f64>,
}

/// Where and how one call of [`train_loop`] runs.
#[derive(Debug, Clone)]
pub struct LoopOptions<'a> {
    /// Label written into metrics and checkpoint names.
    pub phase: String,
    /// Inclusive 1-based epoch range on the global schedule.
    pub first_epoch: usize,
    pub last_epoch: usize,
    pub validation: Option<&'a Dataset>,
    /// Metrics and checkpoints go here when set.
    pub out_dir: Option<&'a Path>,
}

impl<'a> LoopOptions<'a> {
    pub fn full(config: &TrainConfig) -> Self {
        LoopOptions {
            phase: "train".into(),
            first_epoch: 1,
            last_epoch: config.epochs,
            validation: None,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainReport {
    pub metrics: Vec<EpochMetrics>,
    /// Total loss of every optimizer step, in order.
    #[serde(skip)]
    pub step_losses: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_eval: Option<ApResult>,
}

fn load_rasters(dataset: &Dataset) -> Result<Vec<Arc<Raster>>> {
    (0..dataset.len()).into_par_iter().map(|i| dataset.raster(i)).collect()
}

fn checkpoint_meta(model: &DetectorModel<f32>, anchors: &AnchorSet, config: &TrainConfig, phase: &str, epoch: usize) -> serde_json::Value {
    serde_json::json!({
        "model": model.config,
        "anchors": anchors,
        "categories": serde_json::Value::Null,
        "train": config,
        "phase": phase,
        "epoch": epoch,
    })
}

/// Saves `model` with enough metadata to rebuild it for inference.
pub fn save_model(
    model: &mut DetectorModel<f32>,
    anchors: &AnchorSet,
    categories: &[String],
    config: &TrainConfig,
    phase: &str,
    epoch: usize,
    path: &Path,
) -> Result<()> {
    let mut meta = checkpoint_meta(model, anchors, config, phase, epoch);
    meta["categories"] = serde_json::json!(categories);
    Checkpoint::from_module(model, meta).save(path)
}

/// A detector rebuilt from a checkpoint written by [`save_model`].
pub struct LoadedModel {
    pub model: DetectorModel<f32>,
    pub anchors: AnchorSet,
    pub categories: Vec<String>,
}

pub fn load_model(ck: &Checkpoint) -> Result<LoadedModel> {
    let field = |k: &str| {
        ck.meta
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("metadata has no `{k}`")))
    };
    let config: ModelConfig = serde_json::from_value(field("model")?)?;
    let anchors: AnchorSet = serde_json::from_value(field("anchors")?)?;
    let categories: Vec<String> = serde_json::from_value(field("categories")?).unwrap_or_default();
    let mut model = DetectorModel::new(config)?;
    model.restore_full(ck)?;
    Ok(LoadedModel {
        model,
        anchors,
        categories,
    })
}

/// Runs the detector over `dataset` at one input size and scores it.
pub fn evaluate_model(
    model: &mut DetectorModel<f32>,
    anchors: &AnchorSet,
    dataset: &Dataset,
    size: u32,
    conf_threshold: f64,
) -> Result<ApResult> {
    let cfg = PredictConfig {
        input_size: effective_size(size),
        conf_threshold,
        ..PredictConfig::default()
    };
    let rasters = load_rasters(dataset)?;
    let mut dets = Vec::with_capacity(dataset.len());
    for chunk in rasters.chunks(8) {
        let refs: Vec<&Raster> = chunk.iter().map(|r| r.as_ref()).collect();
        dets.extend(predict_batch(model, anchors, &refs, &cfg)?);
    }
    mean_ap(&dets, dataset, &DEFAULT_THRESHOLDS)
}

/// Minibatch Adam over `dataset` for the epochs in `opts`, learning rate
/// from the global schedule. Each batch draws one input size, augments and
/// letterboxes every image with its own `(seed, sample index)` stream, and
/// takes one step on the composite detection loss.
pub fn train_loop(
    model: &mut DetectorModel<f32>,
    dataset: &Dataset,
    anchors: &AnchorSet,
    config: &TrainConfig,
    opts: &LoopOptions<'_>,
) -> Result<TrainReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if dataset.num_categories() != model.num_classes() {
        return Err(Error::invalid(format!(
            "dataset has {} categories, model predicts {}",
            dataset.num_categories(),
            model.num_classes()
        )));
    }
    if opts.first_epoch == 0 || opts.first_epoch > opts.last_epoch {
        return Err(Error::invalid("empty epoch range"));
    }
    let rasters = load_rasters(dataset)?;
    let boundaries = config.schedule.boundaries();
    let mut adam = Adam::new(config.adam);
    let mut report = TrainReport::default();
    let metrics_path = opts.out_dir.map(|d| d.join(METRICS_FILE));
    if let Some(dir) = opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let n = dataset.len();
    let num_classes = model.num_classes();

    for epoch in opts.first_epoch..=opts.last_epoch {
        let started = Instant::now();
        let lr = config.schedule.lr_at(epoch);
        let mut rng = stream_rng(config.seed ^ 0x7261_696e, epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut steps = 0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let size = effective_size(config.sizes[rng.gen_range(0..config.sizes.len())]);
            let aug = AugmentConfig {
                target_size: size,
                seed: config.seed,
                ..config.augment.clone()
            };
            let base = ((epoch - 1) * n + b * config.batch_size) as u64;
            let samples: Vec<Sample> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let sample = Sample {
                        raster: rasters[i].as_ref().clone(),
                        labels: dataset.records[i].labels.clone(),
                    };
                    augment_pipeline(&sample, &aug, base + k as u64).0
                })
                .collect();
            let labels: Vec<_> = samples.iter().map(|s| s.labels.clone()).collect();
            let targets = build_targets(&labels, anchors, size as usize, num_classes, config.loss.ignore_threshold)?;
            let refs: Vec<&Raster> = samples.iter().map(|s| &s.raster).collect();
            let x = image_to_tensor::<f32>(&refs)?;

            model.zero_grad();
            let step = model
                .forward(&x, Phase::Train)
                .and_then(|grid| total_loss(&grid, &targets, &config.loss));
            let (loss, grad) = match step {
                Ok(v) => v,
                Err(Error::NonFinite(what)) => {
                    model.clear_cache();
                    let mut note = format!("{what} at epoch {epoch}, batch {b}");
                    if let Some(dir) = opts.out_dir {
                        let path = dir.join(DIAGNOSTIC_CHECKPOINT);
                        save_model(model, anchors, &dataset.categories, config, &opts.phase, epoch, &path)?;
                        note.push_str(&format!("; state saved to {}", path.display()));
                    }
                    return Err(Error::NonFinite(note));
                }
                Err(e) => return Err(e),
            };
            model.backward(&grad)?;
            model.clear_cache();
            adam.step(model, lr);

            report.step_losses.push(loss.total);
            sum.confidence += loss.confidence;
            sum.classification += loss.classification;
            sum.localization += loss.localization;
            sum.total += loss.total;
            steps += 1;
        }
        let k = steps as f64;
        let mut m = EpochMetrics {
            phase: opts.phase.clone(),
            epoch,
            lr,
            steps,
            images: n,
            loss: sum.total / k,
            confidence: sum.confidence / k,
            classification: sum.classification / k,
            localization: sum.localization / k,
            map50: None,
            map75: None,
        };
        let last = epoch == opts.last_epoch;
        if let Some(val) = opts.validation {
            if config.val_every > 0 && (last || epoch % config.val_every == 0) {
                let ap = evaluate_model(model, anchors, val, config.val_size, config.val_conf_threshold)?;
                m.map50 = ap.map_at(0.5);
                m.map75 = ap.map_at(0.75);
                if last {
                    report.final_eval = Some(ap);
                }
            }
        }
        log::info!(
            "{} epoch {epoch}: lr {lr:e} loss {:.4} ({:.1}s){}",
            opts.phase,
            m.loss,
            started.elapsed().as_secs_f64(),
            m.map50.map(|v| format!(" mAP50 {v:.3}")).unwrap_or_default()
        );
        if let Some(path) = &metrics_path {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let line = serde_json::to_string(&m)?;
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        report.metrics.push(m);
        if let Some(dir) = opts.out_dir {
            if last || boundaries.contains(&epoch) {
                let path = dir.join(format!("{}_epoch{epoch:03}.sddk", opts.phase));
                save_model(model, anchors, &dataset.categories, config, &opts.phase, epoch, &path)?;
                report.checkpoints.push(path);
            }
        }
    }
    Ok(report)
}

/// Reads a metrics log written by [`train_loop`].
pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
