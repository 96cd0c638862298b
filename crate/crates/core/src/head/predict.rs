use serde::{Deserialize, Serialize};

use super::decode_threshold;
use crate::anchors::AnchorSet;
use crate::augment::{letterbox, Sample};
use crate::error::{Error, Result};
use crate::geometry::{nms, Detection, DEFAULT_NMS_THRESHOLD};
use crate::nn::{Phase, Scalar, Tensor};
use crate::raster::Raster;
use crate::train::DetectorModel;

pub const LETTERBOX_FILL: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictConfig {
    pub input_size: u32,
    pub conf_threshold: f64,
    pub nms_threshold: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            input_size: 416,
            conf_threshold: 0.25,
            nms_threshold: DEFAULT_NMS_THRESHOLD,
        }
    }
}

/// Stacks equally sized rasters into an NCHW batch scaled to `[0, 1]`.
pub fn image_to_tensor<T: Scalar>(rasters: &[&Raster]) -> Result<Tensor<T>> {
    let Some(first) = rasters.first() else {
        return Err(Error::invalid("empty image batch"));
    };
    let (w, h) = (first.width() as usize, first.height() as usize);
    let hw = w * h;
    let mut data = vec![T::zero(); rasters.len() * 3 * hw];
    let scale = T::of(1.0 / 255.0);
    for (i, r) in rasters.iter().enumerate() {
        if (r.width() as usize, r.height() as usize) != (w, h) {
            return Err(Error::shape(
                "image batch",
                format!("{}x{} vs {w}x{h}", r.width(), r.height()),
            ));
        }
        let base = i * 3 * hw;
        for (p, px) in r.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[base + c * hw + p] = T::of(px[c] as f64) * scale;
            }
        }
    }
    Tensor::from_vec(&[rasters.len(), 3, h, w], data)
}

/// Letterbox, forward, decode, threshold, per-category NMS, and map back to
/// source pixels.
pub fn predict<T: Scalar>(
    model: &mut DetectorModel<T>,
    anchors: &AnchorSet,
    raster: &Raster,
    config: &PredictConfig,
) -> Result<Vec<Detection>> {
    Ok(predict_batch(model, anchors, &[raster], config)?.pop().unwrap_or_default())
}

pub fn predict_batch<T: Scalar>(
    model: &mut DetectorModel<T>,
    anchors: &AnchorSet,
    rasters: &[&Raster],
    config: &PredictConfig,
) -> Result<Vec<Vec<Detection>>> {
    if config.input_size == 0 || config.input_size % 32 != 0 {
        return Err(Error::invalid(format!(
            "input size {} is not a positive multiple of 32",
            config.input_size
        )));
    }
    let mut boxed = Vec::with_capacity(rasters.len());
    let mut transforms = Vec::with_capacity(rasters.len());
    for r in rasters {
        let sample = Sample {
            raster: (*r).clone(),
            labels: Vec::new(),
        };
        let (s, t) = letterbox(&sample, config.input_size, LETTERBOX_FILL);
        boxed.push(s.raster);
        transforms.push(t);
    }
    let refs: Vec<&Raster> = boxed.iter().collect();
    let x = image_to_tensor::<T>(&refs)?;
    let grid = model.forward(&x, Phase::Infer)?;
    model.clear_cache();
    let decoded = decode_threshold(&grid, anchors, config.conf_threshold);
    Ok(decoded
        .into_iter()
        .zip(transforms.iter().zip(rasters))
        .map(|(dets, (t, r))| {
            nms(&dets, config.nms_threshold)
                .into_iter()
                .map(|d| Detection {
                    bbox: t.invert(&d.bbox).clip(r.width() as f64, r.height() as f64),
                    ..d
                })
                .filter(|d| d.bbox.is_valid())
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NormMode;
    use crate::train::build_toy_detector;

    #[test]
    fn tensor_layout() {
        let mut r = Raster::new(2, 1, [0, 0, 0]);
        r.put(1, 0, [255, 51, 0]);
        let t = image_to_tensor::<f32>(&[&r]).unwrap();
        assert_eq!(t.shape(), &[1, 3, 1, 2]);
        for (a, b) in t.data().iter().zip([0.0, 1.0, 0.0, 0.2, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn untrained_model_at_high_threshold_is_empty() {
        let mut m = build_toy_detector::<f32>(4, 1, NormMode::BatchNorm).unwrap();
        m.init_xavier(11);
        let r = Raster::new(100, 60, [90, 90, 90]);
        let cfg = PredictConfig {
            input_size: 64,
            conf_threshold: 0.99,
            ..PredictConfig::default()
        };
        let dets = predict(&mut m, &AnchorSet::bridge_default().scaled(0.15), &r, &cfg).unwrap();
        assert!(dets.is_empty());
        let bad = PredictConfig { input_size: 100, ..cfg };
        assert!(predict(&mut m, &AnchorSet::bridge_default(), &r, &bad).is_err());
    }
}
