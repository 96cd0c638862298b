use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::model::DetectorModel;
use super::trainer::{evaluate_model, train_loop, EpochMetrics, LoopOptions, TrainConfig};
use crate::anchors::AnchorSet;
use crate::dataset::{compute_stats, compute_stats_per_category, rank_source_classes, Dataset, SourceRank};
use crate::error::{Error, Result};
use crate::nn::Checkpoint;

/// Share of the epochs spent on the source set in the two-phase protocol
/// (30 of 80).
pub const SOURCE_SHARE: (usize, usize) = (30, 80);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TlMode {
    /// Xavier initialization, target data only.
    None,
    /// Backbone restored from a donor, the rest Xavier, then fine-tune.
    A,
    /// Train every layer on the selected source classes, restore all of it,
    /// then fine-tune every layer on the target.
    B,
}

impl FromStr for TlMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(TlMode::None),
            "a" | "tl-a" => Ok(TlMode::A),
            "b" | "tl-b" => Ok(TlMode::B),
            _ => Err(Error::invalid(format!("unknown transfer mode `{s}` (none, a, b)"))),
        }
    }
}

/// Source-phase epochs for a run of `epochs`: 30 of 80, rounded.
pub fn source_epochs(epochs: usize) -> usize {
    let (s, t) = SOURCE_SHARE;
    ((epochs * s) as f64 / t as f64).round().clamp(1.0, epochs.saturating_sub(1).max(1) as f64) as usize
}

pub struct TlInputs<'a> {
    pub target: &'a Dataset,
    pub validation: Option<&'a Dataset>,
    pub source: Option<&'a Dataset>,
    pub donor: Option<&'a Checkpoint>,
    /// Target anchors, used in every phase.
    pub anchors: &'a AnchorSet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseSummary {
    pub name: String,
    pub first_epoch: usize,
    pub last_epoch: usize,
    pub images: usize,
    pub categories: Vec<String>,
    pub anchors: AnchorSet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TlReport {
    pub mode: TlMode,
    pub phases: Vec<PhaseSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_ranking: Option<Vec<SourceRank>>,
    pub metrics: Vec<EpochMetrics>,
    pub map50: Option<f64>,
    pub map75: Option<f64>,
}

/// Source classes whose scale/aspect histograms are closest to the
/// target's, `count` of them, remapped to ids `0..count`.
pub fn select_source(source: &Dataset, target: &Dataset, count: usize) -> Result<(Dataset, Vec<SourceRank>)> {
    let ranking = rank_source_classes(&compute_stats_per_category(source)?, &compute_stats(target)?)?;
    if ranking.len() < count {
        return Err(Error::invalid(format!(
            "source has {} categories with labels, need {count}",
            ranking.len()
        )));
    }
    let keep: Vec<usize> = ranking[..count].iter().map(|r| r.category).collect();
    Ok((source.select_categories(&keep), ranking))
}

/// Trains one model under `mode` and scores it on the validation set.
pub fn tl_harness(
    inputs: &TlInputs<'_>,
    mode: TlMode,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(DetectorModel<f32>, TlReport)> {
    config.validate()?;
    let c = inputs.target.num_categories();
    let mut model = DetectorModel::<f32>::new(config.model_config(c))?;
    let mut phases = Vec::new();
    let mut metrics = Vec::new();
    let mut ranking = None;
    let summary = |name: &str, first: usize, last: usize, ds: &Dataset| PhaseSummary {
        name: name.into(),
        first_epoch: first,
        last_epoch: last,
        images: ds.len(),
        categories: ds.categories.clone(),
        anchors: inputs.anchors.clone(),
    };

    let target_start = match mode {
        TlMode::None => {
            model.init_xavier(config.seed);
            1
        }
        TlMode::A => {
            let donor = inputs
                .donor
                .ok_or_else(|| Error::invalid("TL-A needs a donor checkpoint"))?;
            model.restore_backbone(donor, config.seed)?;
            1
        }
        TlMode::B => {
            let source = inputs
                .source
                .ok_or_else(|| Error::invalid("TL-B needs a source dataset"))?;
            let (selected, rank) = select_source(source, inputs.target, c)?;
            ranking = Some(rank);
            let n = source_epochs(config.epochs);
            let mut donor = DetectorModel::<f32>::new(config.model_config(c))?;
            donor.init_xavier(config.seed);
            let opts = LoopOptions {
                phase: "source".into(),
                first_epoch: 1,
                last_epoch: n,
                validation: None,
                out_dir,
            };
            let r = train_loop(&mut donor, &selected, inputs.anchors, config, &opts)?;
            metrics.extend(r.metrics);
            phases.push(summary("source", 1, n, &selected));
            let ck = Checkpoint::from_module(&mut donor, serde_json::Value::Null);
            model.restore_full(&ck)?;
            n + 1
        }
    };
    // the target phase always starts from fresh optimizer moments
    model.zero_moments();
    let opts = LoopOptions {
        phase: "target".into(),
        first_epoch: target_start,
        last_epoch: config.epochs,
        validation: inputs.validation,
        out_dir,
    };
    let r = train_loop(&mut model, inputs.target, inputs.anchors, config, &opts)?;
    metrics.extend(r.metrics);
    phases.push(summary("target", target_start, config.epochs, inputs.target));

    let eval = match (r.final_eval, inputs.validation) {
        (Some(e), _) => Some(e),
        (None, Some(v)) => Some(evaluate_model(&mut model, inputs.anchors, v, config.val_size, config.val_conf_threshold)?),
        (None, None) => None,
    };
    let report = TlReport {
        mode,
        phases,
        source_ranking: ranking,
        metrics,
        map50: eval.as_ref().and_then(|e| e.map_at(0.5)),
        map75: eval.as_ref().and_then(|e| e.map_at(0.75)),
    };
    Ok((model, report))
}
