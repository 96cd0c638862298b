use serde::{Deserialize, Serialize};

use super::targets::{TargetSet, DEFAULT_IGNORE_THRESHOLD};
use super::GridPrediction;
use crate::error::{Error, Result};
use crate::nn::activation::sigmoid;
use crate::nn::loss::{focal_sigmoid_logit, focal_softmax_logits, DEFAULT_GAMMA};
use crate::nn::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_conf: f64,
    pub lambda_cls: f64,
    pub lambda_loc: f64,
    /// Focal exponent for both the confidence and class terms; 0 gives
    /// plain cross entropy.
    pub gamma: f64,
    pub ignore_threshold: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_conf: 1.0,
            lambda_cls: 1.0,
            lambda_loc: 1.0,
            gamma: DEFAULT_GAMMA,
            ignore_threshold: DEFAULT_IGNORE_THRESHOLD,
        }
    }
}

/// Weighted, batch-averaged loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub confidence: f64,
    pub classification: f64,
    pub localization: f64,
    pub total: f64,
}

/// Composite detection loss and its gradient with respect to every grid
/// entry.
///
/// Confidence: focal sigmoid at positives (target 1) and at negatives
/// (target 0); ignored locations contribute nothing. Classification: focal
/// softmax at positives. Localization: squared error of
/// `(σ(tx), σ(ty), tw, th)` against the targets at positives.
pub fn total_loss<T: Scalar>(
    grid: &GridPrediction<T>,
    targets: &TargetSet,
    config: &LossConfig,
) -> Result<(LossBreakdown, GridPrediction<T>)> {
    if grid.levels.len() != targets.levels.len() || grid.batch() != targets.batch {
        return Err(Error::shape(
            "total_loss",
            format!(
                "grid has {} levels x batch {}, targets {} x {}",
                grid.levels.len(),
                grid.batch(),
                targets.levels.len(),
                targets.batch
            ),
        ));
    }
    let norm = 1.0 / targets.batch.max(1) as f64;
    let mut out = LossBreakdown::default();
    let mut grad = grid.zeros_like();
    for ((lg, lt), gg) in grid.levels.iter().zip(&targets.levels).zip(grad.levels.iter_mut()) {
        if lg.height() != lt.height || lg.width() != lt.width || lg.num_classes() != targets.num_classes {
            return Err(Error::shape(
                "total_loss",
                format!(
                    "level {}x{} with {} classes vs targets {}x{} with {}",
                    lg.height(),
                    lg.width(),
                    lg.num_classes(),
                    lt.height,
                    lt.width,
                    targets.num_classes
                ),
            ));
        }
        let e = lg.entry_len();
        let src = lg.data.data();
        let dst = gg.data.data_mut();
        for i in 0..lt.positive.len() {
            let o = i * e;
            let entry = &src[o..o + e];
            let g = &mut dst[o..o + e];
            if lt.positive[i] {
                let (l, d) = focal_sigmoid_logit(entry[4].f64(), true, config.gamma);
                out.confidence += config.lambda_conf * norm * l;
                g[4] = T::of(config.lambda_conf * norm * d);

                let logits: Vec<f64> = entry[5..].iter().map(|v| v.f64()).collect();
                let (l, d) = focal_softmax_logits(&logits, lt.category[i], config.gamma);
                out.classification += config.lambda_cls * norm * l;
                for (gk, dk) in g[5..].iter_mut().zip(d) {
                    *gk = T::of(config.lambda_cls * norm * dk);
                }

                let c = lt.coords[i];
                let w = config.lambda_loc * norm;
                for k in 0..2 {
                    let s = sigmoid(entry[k].f64());
                    let diff = s - c[k];
                    out.localization += w * diff * diff;
                    g[k] = T::of(w * 2.0 * diff * s * (1.0 - s));
                }
                for k in 2..4 {
                    let diff = entry[k].f64() - c[k];
                    out.localization += w * diff * diff;
                    g[k] = T::of(w * 2.0 * diff);
                }
            } else if !lt.ignore[i] {
                let (l, d) = focal_sigmoid_logit(entry[4].f64(), false, config.gamma);
                out.confidence += config.lambda_conf * norm * l;
                g[4] = T::of(config.lambda_conf * norm * d);
            }
        }
    }
    out.total = out.confidence + out.classification + out.localization;
    if !out.total.is_finite() {
        return Err(Error::NonFinite("detection loss".into()));
    }
    Ok((out, grad))
}
