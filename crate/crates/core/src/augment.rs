//! Training-time augmentation: random scale/crop, flips, one photometric
//! perturbation (motion blur, HLS lightness shift or salt-and-pepper noise),
//! then letterboxing to the network input size.
//!
//! Every random draw comes from a ChaCha stream keyed by `(seed, index)`, so a
//! record's augmentation is reproducible no matter which worker produces it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ObjectLabel;
use crate::error::{Error, Result};
use crate::geometry::LetterboxTransform;
use crate::raster::Raster;

/// A raster together with its labels, in the raster's own frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub raster: Raster,
    pub labels: Vec<ObjectLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub p_geom: f64,
    pub p_flip: f64,
    pub p_photo: f64,
    pub crop_scale: (f64, f64),
    pub blur_length: (u32, u32),
    pub blur_angle: (f64, f64),
    pub brightness_delta: (f64, f64),
    pub noise_density: (f64, f64),
    pub crop_tries: usize,
    pub pad_fill: u8,
    pub target_size: u32,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_geom: 0.5,
            p_flip: 1.0 / 3.0,
            p_photo: 0.25,
            crop_scale: (0.6, 1.0),
            blur_length: (3, 15),
            blur_angle: (0.0, 180.0),
            brightness_delta: (-0.3, 0.3),
            noise_density: (0.005, 0.03),
            crop_tries: 20,
            pad_fill: 128,
            target_size: 416,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Letterbox only.
    pub fn disabled(target_size: u32) -> Self {
        AugmentConfig {
            p_geom: 0.0,
            p_flip: 0.0,
            p_photo: 0.0,
            target_size,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_geom", self.p_geom), ("p_flip", self.p_flip), ("p_photo", self.p_photo)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} = {p} is not a probability")));
            }
        }
        let ordered = |(lo, hi): (f64, f64)| lo <= hi;
        if !ordered(self.crop_scale) || self.crop_scale.0 <= 0.0 || self.crop_scale.1 > 1.0 {
            return Err(Error::invalid("crop_scale must satisfy 0 < lo <= hi <= 1"));
        }
        if self.blur_length.0 < 1 || self.blur_length.0 > self.blur_length.1 {
            return Err(Error::invalid("blur_length must satisfy 1 <= lo <= hi"));
        }
        if !ordered(self.blur_angle) || !ordered(self.brightness_delta) || !ordered(self.noise_density) {
            return Err(Error::invalid("augmentation ranges must be ordered"));
        }
        if self.noise_density.0 < 0.0 || self.noise_density.1 > 1.0 {
            return Err(Error::invalid("noise_density must lie in [0, 1]"));
        }
        if self.target_size == 0 {
            return Err(Error::invalid("target_size must be positive"));
        }
        Ok(())
    }
}

/// Crops the window `[x, x + w) x [y, y + h)` if every box lies fully inside
/// it; boxes are shifted into the crop frame. Returns `None` otherwise.
pub fn random_scale_crop(sample: &Sample, origin: (u32, u32), size: (u32, u32)) -> Option<Sample> {
    let (x, y) = origin;
    let (w, h) = size;
    if w == 0 || h == 0 || x + w > sample.raster.width() || y + h > sample.raster.height() {
        return None;
    }
    let (fx, fy, fw, fh) = (x as f64, y as f64, w as f64, h as f64);
    let inside = sample.labels.iter().all(|l| {
        l.bbox.xmin >= fx && l.bbox.ymin >= fy && l.bbox.xmax <= fx + fw && l.bbox.ymax <= fy + fh
    });
    if !inside {
        return None;
    }
    Some(Sample {
        raster: sample.raster.crop(x, y, w, h),
        labels: sample
            .labels
            .iter()
            .map(|l| ObjectLabel {
                category: l.category,
                bbox: l.bbox.translate(-fx, -fy).clip(fw, fh),
            })
            .collect(),
    })
}

/// Draws crop windows until one keeps every box, up to `tries` attempts.
/// Falls back to the unchanged sample.
pub fn sample_scale_crop(
    sample: &Sample,
    scale: (f64, f64),
    tries: usize,
    rng: &mut impl Rng,
) -> (Sample, bool) {
    let (w, h) = (sample.raster.width(), sample.raster.height());
    for _ in 0..tries {
        let s = if scale.0 < scale.1 {
            rng.gen_range(scale.0..=scale.1)
        } else {
            scale.0
        };
        let cw = ((w as f64 * s).round() as u32).clamp(1, w);
        let ch = ((h as f64 * s).round() as u32).clamp(1, h);
        let x = rng.gen_range(0..=w - cw);
        let y = rng.gen_range(0..=h - ch);
        if let Some(out) = random_scale_crop(sample, (x, y), (cw, ch)) {
            return (out, true);
        }
    }
    (sample.clone(), false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipAxis {
    Horizontal,
    Vertical,
}

pub fn flip(sample: &Sample, axis: FlipAxis) -> Sample {
    let src = &sample.raster;
    let (w, h) = (src.width(), src.height());
    let mut out = src.clone();
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = match axis {
                FlipAxis::Horizontal => (w - 1 - x, y),
                FlipAxis::Vertical => (x, h - 1 - y),
            };
            out.put(x, y, src.get(sx, sy));
        }
    }
    let (fw, fh) = (w as f64, h as f64);
    let labels = sample
        .labels
        .iter()
        .map(|l| {
            let b = l.bbox;
            let bbox = match axis {
                FlipAxis::Horizontal => crate::geometry::BBox {
                    xmin: fw - b.xmax,
                    xmax: fw - b.xmin,
                    ..b
                },
                FlipAxis::Vertical => crate::geometry::BBox {
                    ymin: fh - b.ymax,
                    ymax: fh - b.ymin,
                    ..b
                },
            };
            ObjectLabel {
                category: l.category,
                bbox,
            }
        })
        .collect();
    Sample {
        raster: out,
        labels,
    }
}

/// Line kernel with integer tap counts; each tap weighs `count / length`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlurKernel {
    pub taps: Vec<(i32, i32, u32)>,
    pub length: u32,
}

impl BlurKernel {
    /// Nearest-pixel rasterization of a centered segment of `length` samples.
    pub fn line(length: u32, angle_deg: f64) -> Self {
        let length = length.max(1);
        let (sin, cos) = angle_deg.to_radians().sin_cos();
        let mut taps: Vec<(i32, i32, u32)> = Vec::new();
        for i in 0..length {
            let t = i as f64 - (length as f64 - 1.0) / 2.0;
            let dx = (t * cos).round() as i32;
            let dy = (t * sin).round() as i32;
            match taps.iter_mut().find(|(x, y, _)| *x == dx && *y == dy) {
                Some(tap) => tap.2 += 1,
                None => taps.push((dx, dy, 1)),
            }
        }
        BlurKernel { taps, length }
    }

    /// Sum of tap counts; equals `length` so the weights sum to exactly 1.
    pub fn total_count(&self) -> u32 {
        self.taps.iter().map(|t| t.2).sum()
    }
}

/// Linear motion blur, clamp-to-edge borders.
pub fn motion_blur(raster: &Raster, length: u32, angle_deg: f64) -> Raster {
    let kernel = BlurKernel::line(length, angle_deg);
    if kernel.taps.len() == 1 {
        return raster.clone();
    }
    let (w, h) = (raster.width() as i32, raster.height() as i32);
    let mut out = raster.clone();
    let denom = kernel.length;
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0u32; 3];
            for &(dx, dy, n) in &kernel.taps {
                let px = raster.get((x + dx).clamp(0, w - 1) as u32, (y + dy).clamp(0, h - 1) as u32);
                for c in 0..3 {
                    acc[c] += n * px[c] as u32;
                }
            }
            let px = acc.map(|a| ((a + denom / 2) / denom).min(255) as u8);
            out.put(x as u32, y as u32, px);
        }
    }
    out
}

pub fn rgb_to_hls(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let maxc = r.max(g).max(b);
    let minc = r.min(g).min(b);
    let l = (minc + maxc) / 2.0;
    if minc == maxc {
        return (0.0, l, 0.0);
    }
    let d = maxc - minc;
    let s = if l <= 0.5 { d / (maxc + minc) } else { d / (2.0 - maxc - minc) };
    let rc = (maxc - r) / d;
    let gc = (maxc - g) / d;
    let bc = (maxc - b) / d;
    let h = if r == maxc {
        bc - gc
    } else if g == maxc {
        2.0 + rc - bc
    } else {
        4.0 + gc - rc
    };
    ((h / 6.0).rem_euclid(1.0), l, s)
}

pub fn hls_to_rgb(h: f64, l: f64, s: f64) -> (f64, f64, f64) {
    if s == 0.0 {
        return (l, l, l);
    }
    let m2 = if l <= 0.5 { l * (1.0 + s) } else { l + s - l * s };
    let m1 = 2.0 * l - m2;
    let v = |hue: f64| {
        let hue = hue.rem_euclid(1.0);
        if hue < 1.0 / 6.0 {
            m1 + (m2 - m1) * hue * 6.0
        } else if hue < 0.5 {
            m2
        } else if hue < 2.0 / 3.0 {
            m1 + (m2 - m1) * (2.0 / 3.0 - hue) * 6.0
        } else {
            m1
        }
    };
    (v(h + 1.0 / 3.0), v(h), v(h - 1.0 / 3.0))
}

/// Shifts HLS lightness by `delta` (clamped to `[0, 1]`) for every pixel.
pub fn brightness_hls(raster: &Raster, delta: f64) -> Raster {
    let mut out = raster.clone();
    let to8 = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    for px in out.data_mut().chunks_exact_mut(3) {
        let (h, l, s) = rgb_to_hls(px[0] as f64 / 255.0, px[1] as f64 / 255.0, px[2] as f64 / 255.0);
        let (r, g, b) = hls_to_rgb(h, (l + delta).clamp(0.0, 1.0), s);
        px[0] = to8(r);
        px[1] = to8(g);
        px[2] = to8(b);
    }
    out
}

/// Each pixel independently becomes black or white (equal odds) with
/// probability `density`. Returns the raster and the corrupted pixel count.
pub fn salt_pepper(raster: &Raster, density: f64, rng: &mut impl Rng) -> (Raster, usize) {
    let mut out = raster.clone();
    let mut corrupted = 0;
    for px in out.data_mut().chunks_exact_mut(3) {
        if rng.gen::<f64>() < density {
            let v = if rng.gen_bool(0.5) { 0 } else { 255 };
            px.fill(v);
            corrupted += 1;
        }
    }
    (out, corrupted)
}

/// Resizes into a `target x target` canvas filled with `fill`; boxes follow.
pub fn letterbox(sample: &Sample, target: u32, fill: u8) -> (Sample, LetterboxTransform) {
    let t = LetterboxTransform::new(sample.raster.width(), sample.raster.height(), target);
    let (cw, ch) = t.content_size();
    let mut canvas = Raster::new(target, target, [fill; 3]);
    canvas.paste(&sample.raster.resize(cw, ch), t.pad_x as u32, t.pad_y as u32);
    let labels = sample
        .labels
        .iter()
        .map(|l| ObjectLabel {
            category: l.category,
            bbox: t.apply(&l.bbox).clip(target as f64, target as f64),
        })
        .collect();
    (
        Sample {
            raster: canvas,
            labels,
        },
        t,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhotometricOp {
    MotionBlur,
    Brightness,
    SaltPepper,
}

/// Which branches one pipeline draw took.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AugmentTrace {
    pub geometric: bool,
    pub crop_applied: bool,
    pub flip: Option<FlipAxis>,
    pub photometric: Option<PhotometricOp>,
}

/// Independent random stream for record `index` under master `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn augment_pipeline(sample: &Sample, config: &AugmentConfig, index: u64) -> (Sample, AugmentTrace) {
    let mut rng = stream_rng(config.seed, index);
    augment_with_rng(sample, config, &mut rng)
}

pub fn augment_with_rng(sample: &Sample, config: &AugmentConfig, rng: &mut impl Rng) -> (Sample, AugmentTrace) {
    let mut trace = AugmentTrace::default();
    let mut cur = std::borrow::Cow::Borrowed(sample);

    if rng.gen_bool(config.p_geom) {
        trace.geometric = true;
        let (out, ok) = sample_scale_crop(&cur, config.crop_scale, config.crop_tries, rng);
        trace.crop_applied = ok;
        cur = std::borrow::Cow::Owned(out);
    }
    if rng.gen_bool(config.p_flip) {
        let axis = if rng.gen_bool(0.5) {
            FlipAxis::Horizontal
        } else {
            FlipAxis::Vertical
        };
        trace.flip = Some(axis);
        cur = std::borrow::Cow::Owned(flip(&cur, axis));
    }
    if rng.gen_bool(config.p_photo) {
        let raster = &cur.raster;
        let (op, raster) = match rng.gen_range(0..3) {
            0 => {
                let (lo, hi) = config.blur_length;
                let len = rng.gen_range(lo..=hi);
                let angle = uniform(rng, config.blur_angle);
                (PhotometricOp::MotionBlur, motion_blur(raster, len, angle))
            }
            1 => {
                let delta = uniform(rng, config.brightness_delta);
                (PhotometricOp::Brightness, brightness_hls(raster, delta))
            }
            _ => {
                let density = uniform(rng, config.noise_density);
                (PhotometricOp::SaltPepper, salt_pepper(raster, density, rng).0)
            }
        };
        trace.photometric = Some(op);
        cur = std::borrow::Cow::Owned(Sample {
            raster,
            labels: cur.labels.clone(),
        });
    }
    let (out, _) = letterbox(&cur, config.target_size, config.pad_fill);
    (out, trace)
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo < hi {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn gradient_raster(w: u32, h: u32) -> Raster {
        let mut r = Raster::new(w, h, [0, 0, 0]);
        for y in 0..h {
            for x in 0..w {
                r.put(x, y, [(x * 7 % 256) as u8, (y * 5 % 256) as u8, ((x + y) % 256) as u8]);
            }
        }
        r
    }

    fn sample_with(boxes: &[[f64; 4]], w: u32, h: u32) -> Sample {
        Sample {
            raster: gradient_raster(w, h),
            labels: boxes
                .iter()
                .map(|&b| ObjectLabel {
                    category: 0,
                    bbox: b.into(),
                })
                .collect(),
        }
    }

    #[test]
    fn full_crop_is_identity() {
        let s = sample_with(&[[10.0, 10.0, 20.0, 30.0]], 64, 48);
        assert_eq!(random_scale_crop(&s, (0, 0), (64, 48)).unwrap(), s);
    }

    #[test]
    fn crop_rejects_window_cutting_a_box() {
        let s = sample_with(&[[2.0, 2.0, 12.0, 12.0]], 64, 48);
        assert!(random_scale_crop(&s, (5, 0), (40, 40)).is_none());
    }

    #[test]
    fn crop_shifts_boxes_by_origin() {
        let s = sample_with(&[[20.0, 15.0, 30.0, 25.0], [12.0, 11.0, 40.0, 33.0]], 64, 48);
        let c = random_scale_crop(&s, (10, 10), (40, 30)).unwrap();
        assert_eq!(c.labels[0].bbox, BBox::new(10.0, 5.0, 20.0, 15.0));
        assert_eq!(c.labels[1].bbox, BBox::new(2.0, 1.0, 30.0, 23.0));
        assert_eq!(c.raster.get(0, 0), s.raster.get(10, 10));
    }

    #[test]
    fn crop_sampler_falls_back_when_impossible() {
        let s = sample_with(&[[0.0, 0.0, 64.0, 48.0]], 64, 48);
        let mut rng = stream_rng(1, 0);
        let (out, ok) = sample_scale_crop(&s, (0.6, 0.9), 20, &mut rng);
        assert!(!ok);
        assert_eq!(out, s);
    }

    #[test]
    fn horizontal_flip_mirrors_box() {
        let s = sample_with(&[[10.0, 20.0, 30.0, 40.0]], 100, 60);
        let f = flip(&s, FlipAxis::Horizontal);
        assert_eq!(f.labels[0].bbox, BBox::new(70.0, 20.0, 90.0, 40.0));
        assert_eq!(f.raster.get(0, 3), s.raster.get(99, 3));
        for axis in [FlipAxis::Horizontal, FlipAxis::Vertical] {
            assert_eq!(flip(&flip(&s, axis), axis), s);
        }
    }

    #[test]
    fn flip_of_symmetric_scene_is_noop() {
        let mut r = Raster::new(20, 10, [50, 50, 50]);
        for y in 3..7 {
            for x in 8..12 {
                r.put(x, y, [200, 10, 10]);
            }
        }
        let s = Sample {
            raster: r,
            labels: vec![ObjectLabel {
                category: 1,
                bbox: BBox::new(8.0, 3.0, 12.0, 7.0),
            }],
        };
        assert_eq!(flip(&s, FlipAxis::Horizontal), s);
        assert_eq!(flip(&s, FlipAxis::Vertical), s);
    }

    #[test]
    fn blur_identity_and_constant() {
        let r = gradient_raster(17, 9);
        assert_eq!(motion_blur(&r, 1, 37.0), r);
        let c = Raster::new(12, 12, [91, 17, 240]);
        for len in 2..16 {
            for angle in [0.0, 22.5, 45.0, 90.0, 133.0] {
                assert_eq!(motion_blur(&c, len, angle), c);
            }
        }
    }

    #[test]
    fn blur_impulse_spreads_horizontally() {
        let mut r = Raster::new(9, 5, [0, 0, 0]);
        r.put(4, 2, [255, 255, 255]);
        let b = motion_blur(&r, 3, 0.0);
        for x in 0..9 {
            let want = if (3..=5).contains(&x) { 85 } else { 0 };
            assert_eq!(b.get(x, 2), [want; 3], "x = {x}");
        }
        assert_eq!(b.get(4, 1), [0; 3]);
    }

    #[test]
    fn blur_kernels_are_normalized() {
        for len in 1..=15 {
            for step in 0..36 {
                let k = BlurKernel::line(len, step as f64 * 5.0);
                assert_eq!(k.total_count(), k.length);
            }
        }
    }

    #[test]
    fn brightness_fixtures() {
        let gray = Raster::new(1, 1, [100, 100, 100]);
        assert_eq!(brightness_hls(&gray, 0.2).get(0, 0), [151, 151, 151]);
        let white = Raster::new(1, 1, [255, 255, 255]);
        assert_eq!(brightness_hls(&white, 0.3).get(0, 0), [255, 255, 255]);
    }

    #[test]
    fn brightness_zero_delta_within_one_step() {
        let mut r = Raster::new(64, 64, [0, 0, 0]);
        let mut rng = stream_rng(9, 9);
        for px in r.data_mut().iter_mut() {
            *px = rng.gen();
        }
        let out = brightness_hls(&r, 0.0);
        for (a, b) in r.data().iter().zip(out.data()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
    }

    #[test]
    fn hls_round_trip() {
        for &(r, g, b) in &[(0.2, 0.5, 0.9), (1.0, 0.0, 0.0), (0.3, 0.3, 0.1), (0.0, 0.7, 0.7)] {
            let (h, l, s) = rgb_to_hls(r, g, b);
            let (r2, g2, b2) = hls_to_rgb(h, l, s);
            assert!((r - r2).abs() < 1e-12 && (g - g2).abs() < 1e-12 && (b - b2).abs() < 1e-12);
        }
    }

    #[test]
    fn salt_pepper_extremes() {
        let r = gradient_raster(30, 20);
        let mut rng = stream_rng(4, 0);
        assert_eq!(salt_pepper(&r, 0.0, &mut rng).0, r);
        let (all, n) = salt_pepper(&r, 1.0, &mut rng);
        assert_eq!(n, 600);
        for px in all.data().chunks_exact(3) {
            assert!(px == [0, 0, 0] || px == [255, 255, 255]);
        }
    }

    #[test]
    fn disabled_pipeline_is_pure_letterbox() {
        let s = sample_with(&[[10.0, 5.0, 40.0, 30.0]], 80, 40);
        let cfg = AugmentConfig::disabled(64);
        let (out, trace) = augment_pipeline(&s, &cfg, 3);
        assert_eq!(trace, AugmentTrace::default());
        assert_eq!(out, letterbox(&s, 64, 128).0);
        assert_eq!(out.labels[0].bbox, BBox::new(8.0, 20.0, 32.0, 40.0));
    }

    #[test]
    fn pipeline_is_deterministic_and_in_bounds() {
        let s = sample_with(&[[10.0, 5.0, 40.0, 30.0], [50.0, 20.0, 70.0, 38.0]], 80, 40);
        let cfg = AugmentConfig {
            p_geom: 1.0,
            p_flip: 1.0,
            p_photo: 1.0,
            target_size: 96,
            seed: 77,
            ..Default::default()
        };
        for i in 0..30 {
            let a = augment_pipeline(&s, &cfg, i);
            assert_eq!(a, augment_pipeline(&s, &cfg, i));
            assert_eq!(a.0.raster.width(), 96);
            for l in &a.0.labels {
                assert!(l.bbox.is_inside(96.0, 96.0) && l.bbox.is_valid());
            }
        }
    }
}
