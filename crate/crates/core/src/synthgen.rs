//! Synthetic damage-like images with tight box labels.
//!
//! Every image is drawn from its own ChaCha stream keyed by `(seed, index)`,
//! so generation is parallel per image and still byte-reproducible.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::stream_rng;
use crate::dataset::{default_categories, save_jsonl, Dataset, ImageRecord, ObjectLabel};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::raster::Raster;

pub const TARGET_MIX: [f64; 4] = [0.35, 0.15, 0.13, 0.37];
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Archetype {
    /// Thin jagged dark polyline along the long axis.
    Crack,
    /// Light elliptical crater with a dark rim.
    Blob,
    /// Irregular textured patch.
    Patch,
    /// Dark rectangle crossed by bars along the long axis.
    Stripes,
    Ring,
    Checker,
    Wedge,
    Disc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeSpec {
    pub archetype: Archetype,
    /// Box area over image area, drawn log-uniformly.
    pub area: (f64, f64),
    /// Width over height, drawn log-uniformly.
    pub aspect: (f64, f64),
    /// Transpose half the draws (vertical cracks and bars).
    pub transpose: bool,
    pub color: [u8; 3],
}

impl ArchetypeSpec {
    fn new(archetype: Archetype, area: (f64, f64), aspect: (f64, f64), transpose: bool, color: [u8; 3]) -> Self {
        ArchetypeSpec {
            archetype,
            area,
            aspect,
            transpose,
            color,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub gray: (u8, u8),
    pub noise_sigma: f64,
    /// Amplitude of the low-frequency shading.
    pub shading: f64,
}

impl Default for Background {
    fn default() -> Self {
        Background {
            gray: (115, 165),
            noise_sigma: 7.0,
            shading: 12.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Four damage-like archetypes in the crack/pop-out/spalling/rebar mix.
    Target,
    /// Eight archetypes over a broader range of scales and aspects.
    Source,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(Preset::Target),
            "source" => Ok(Preset::Source),
            _ => Err(Error::invalid(format!("unknown preset `{s}` (target, source)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub count: usize,
    pub width: u32,
    pub height: u32,
    pub categories: Vec<String>,
    /// Per-object category probabilities.
    pub mix: Vec<f64>,
    pub archetypes: Vec<ArchetypeSpec>,
    /// Inclusive range of objects attempted per image.
    pub objects_per_image: (usize, usize),
    /// Largest IoU a new object may have with one already placed.
    pub max_overlap: f64,
    pub max_retries: usize,
    pub background: Background,
    pub seed: u64,
}

impl SynthConfig {
    pub fn preset(preset: Preset, count: usize, size: u32, seed: u64) -> Self {
        use Archetype::*;
        let (categories, mix, archetypes) = match preset {
            Preset::Target => (
                default_categories(),
                TARGET_MIX.to_vec(),
                vec![
                    ArchetypeSpec::new(Crack, (0.012, 0.05), (4.0, 9.0), true, [35, 35, 38]),
                    ArchetypeSpec::new(Blob, (0.006, 0.025), (0.8, 1.25), false, [205, 203, 196]),
                    ArchetypeSpec::new(Patch, (0.03, 0.12), (0.6, 1.6), false, [92, 80, 70]),
                    ArchetypeSpec::new(Stripes, (0.02, 0.09), (1.8, 4.0), true, [170, 85, 40]),
                ],
            ),
            Preset::Source => (
                ["streak", "ring", "blotch", "grating", "checker", "wedge", "speck", "beam"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                vec![0.125; 8],
                vec![
                    ArchetypeSpec::new(Crack, (0.008, 0.08), (3.0, 12.0), true, [50, 45, 40]),
                    ArchetypeSpec::new(Ring, (0.005, 0.04), (0.75, 1.33), false, [215, 210, 200]),
                    ArchetypeSpec::new(Patch, (0.02, 0.2), (0.5, 2.0), false, [80, 90, 100]),
                    ArchetypeSpec::new(Stripes, (0.01, 0.12), (1.5, 5.0), true, [150, 110, 60]),
                    ArchetypeSpec::new(Checker, (0.08, 0.35), (0.7, 1.4), false, [230, 230, 230]),
                    ArchetypeSpec::new(Wedge, (0.06, 0.4), (0.8, 2.5), false, [60, 120, 70]),
                    ArchetypeSpec::new(Disc, (0.001, 0.005), (0.8, 1.25), false, [20, 20, 90]),
                    ArchetypeSpec::new(Stripes, (0.1, 0.3), (2.0, 4.0), true, [120, 60, 140]),
                ],
            ),
        };
        SynthConfig {
            count,
            width: size,
            height: size,
            categories,
            mix,
            archetypes,
            objects_per_image: (1, 3),
            max_overlap: 0.1,
            max_retries: 200,
            background: Background::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.categories.len();
        if n == 0 || self.mix.len() != n || self.archetypes.len() != n {
            return Err(Error::invalid(format!(
                "{n} categories, {} mix weights, {} archetypes",
                self.mix.len(),
                self.archetypes.len()
            )));
        }
        if self.mix.iter().any(|&m| !(m >= 0.0)) || (self.mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("category mix must be non-negative and sum to 1"));
        }
        let (lo, hi) = self.objects_per_image;
        if lo < 1 || lo > hi {
            return Err(Error::invalid("objects per image must satisfy 1 <= lo <= hi"));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::invalid("images must be at least 8x8"));
        }
        for a in &self.archetypes {
            let ok = |(l, h): (f64, f64)| l > 0.0 && l <= h;
            if !ok(a.area) || a.area.1 > 1.0 || !ok(a.aspect) {
                return Err(Error::invalid(format!("bad area/aspect range for {:?}", a.archetype)));
            }
        }
        let (g0, g1) = self.background.gray;
        if g0 > g1 || !(self.background.noise_sigma >= 0.0) {
            return Err(Error::invalid("bad background parameters"));
        }
        Ok(())
    }
}

fn log_uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo >= hi {
        return lo;
    }
    rng.gen_range(lo.ln()..hi.ln()).exp()
}

/// Float RGB canvas the objects are composited on.
struct Canvas {
    width: usize,
    height: usize,
    px: Vec<[f32; 3]>,
}

impl Canvas {
    fn background(w: u32, h: u32, bg: &Background, rng: &mut impl Rng) -> Self {
        let (width, height) = (w as usize, h as usize);
        let base = rng.gen_range(bg.gray.0..=bg.gray.1) as f64;
        let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-4.0..4.0));
        let fx = rng.gen_range(0.5..2.0) * std::f64::consts::TAU / width as f64;
        let fy = rng.gen_range(0.5..2.0) * std::f64::consts::TAU / height as f64;
        let (px0, py0) = (rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3));
        let noise = Normal::new(0.0, bg.noise_sigma.max(1e-12)).expect("finite sigma");
        let mut px = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let shade = bg.shading * (fx * x as f64 + px0).sin() * (fy * y as f64 + py0).sin();
                let n = if bg.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                let g = base + shade + n;
                px.push(std::array::from_fn(|c| (g + tint[c]) as f32));
            }
        }
        Canvas { width, height, px }
    }

    fn into_raster(self) -> Raster {
        let data = self
            .px
            .iter()
            .flat_map(|p| p.map(|v| v.round().clamp(0.0, 255.0) as u8))
            .collect();
        Raster::from_raw(self.width as u32, self.height as u32, data).expect("sized canvas")
    }
}

/// Alpha and colour per pixel of a `w x h` box.
struct Stamp {
    w: usize,
    h: usize,
    alpha: Vec<f32>,
    color: Vec<[f32; 3]>,
}

impl Stamp {
    fn new(w: usize, h: usize) -> Self {
        Stamp {
            w,
            h,
            alpha: vec![0.0; w * h],
            color: vec![[0.0; 3]; w * h],
        }
    }

    fn set(&mut self, u: usize, v: usize, a: f64, c: [f64; 3]) {
        let i = v * self.w + u;
        self.alpha[i] = a.clamp(0.0, 1.0) as f32;
        self.color[i] = c.map(|x| x as f32);
    }

    fn transposed(self) -> Stamp {
        let mut t = Stamp::new(self.h, self.w);
        for v in 0..self.h {
            for u in 0..self.w {
                let (i, j) = (v * self.w + u, u * self.h + v);
                t.alpha[j] = self.alpha[i];
                t.color[j] = self.color[i];
            }
        }
        t
    }

    /// Extent of the pixels with alpha of at least one half.
    fn extent(&self) -> Option<(usize, usize, usize, usize)> {
        let mut e: Option<(usize, usize, usize, usize)> = None;
        for v in 0..self.h {
            for u in 0..self.w {
                if self.alpha[v * self.w + u] >= 0.5 {
                    e = Some(match e {
                        None => (u, v, u, v),
                        Some((a, b, c, d)) => (a.min(u), b.min(v), c.max(u), d.max(v)),
                    });
                }
            }
        }
        e
    }
}

fn scale_color(c: [u8; 3], k: f64) -> [f64; 3] {
    c.map(|x| x as f64 * k)
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

fn draw_crack(w: usize, h: usize, color: [u8; 3], rng: &mut impl Rng) -> Stamp {
    let mut s = Stamp::new(w, h);
    let t = (h as f64 * 0.3).clamp(1.2, 2.6);
    let half = t / 2.0;
    let n = rng.gen_range(4..=7usize);
    let lo = half;
    let hi = (h as f64 - half).max(lo);
    let mut ys: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..=hi)).collect();
    // touch both long edges so the drawn extent fills the sampled box
    let a = rng.gen_range(0..n);
    let b = (a + rng.gen_range(1..n)) % n;
    ys[a] = lo;
    ys[b] = hi;
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|i| (half + (w as f64 - t) * i as f64 / (n - 1) as f64, ys[i]))
        .collect();
    let c = scale_color(color, 1.0);
    for v in 0..h {
        for u in 0..w {
            let p = (u as f64 + 0.5, v as f64 + 0.5);
            let d = pts
                .windows(2)
                .map(|seg| segment_distance(p, seg[0], seg[1]))
                .fold(f64::INFINITY, f64::min);
            s.set(u, v, half + 0.5 - d, c);
        }
    }
    s
}

/// Normalized elliptical radius of pixel `(u, v)` in a `w x h` box, with
/// the pixel-scale antialiasing width.
fn ellipse_rho(u: usize, v: usize, w: usize, h: usize) -> (f64, f64) {
    let (rx, ry) = (w as f64 / 2.0, h as f64 / 2.0);
    let (dx, dy) = ((u as f64 + 0.5 - rx) / rx, (v as f64 + 0.5 - ry) / ry);
    ((dx * dx + dy * dy).sqrt(), rx.min(ry))
}

fn draw_ellipse(w: usize, h: usize, inner: f64, fill: impl Fn(f64) -> [f64; 3]) -> Stamp {
    let mut s = Stamp::new(w, h);
    for v in 0..h {
        for u in 0..w {
            let (rho, r) = ellipse_rho(u, v, w, h);
            let a = ((1.0 - rho) * r + 0.5).min((rho - inner) * r + 0.5);
            s.set(u, v, a, fill(rho));
        }
    }
    s
}

fn draw_patch(w: usize, h: usize, color: [u8; 3], rng: &mut impl Rng) -> Stamp {
    let mut s = Stamp::new(w, h);
    let harmonics: Vec<(f64, f64, f64)> = (2..=5)
        .map(|k| (k as f64, rng.gen_range(0.03..0.09), rng.gen_range(0.0..6.3)))
        .collect();
    let amp: f64 = harmonics.iter().map(|h| h.1).sum();
    for v in 0..h {
        for u in 0..w {
            let (rx, ry) = (w as f64 / 2.0, h as f64 / 2.0);
            let (dx, dy) = ((u as f64 + 0.5 - rx) / rx, (v as f64 + 0.5 - ry) / ry);
            let theta = dy.atan2(dx);
            let wobble: f64 = harmonics.iter().map(|(k, a, p)| a * (k * theta + p).sin()).sum();
            let edge = 1.0 - amp + wobble;
            let rho = (dx * dx + dy * dy).sqrt() / edge.max(0.3);
            let grain = rng.gen_range(-18.0..18.0);
            s.set(u, v, (1.0 - rho) * rx.min(ry) + 0.5, scale_color(color, 1.0).map(|c| c + grain));
        }
    }
    s
}

fn draw_stripes(w: usize, h: usize, color: [u8; 3], rng: &mut impl Rng) -> Stamp {
    let mut s = Stamp::new(w, h);
    let bars = rng.gen_range(2..=4usize);
    let period = h as f64 / bars as f64;
    let base = scale_color(color, 0.35);
    let bar = scale_color(color, 1.0);
    for v in 0..h {
        let phase = ((v as f64 + 0.5) / period).fract();
        let on = (0.25..0.75).contains(&phase);
        for u in 0..w {
            s.set(u, v, 1.0, if on { bar } else { base });
        }
    }
    s
}

fn draw_checker(w: usize, h: usize, color: [u8; 3]) -> Stamp {
    let mut s = Stamp::new(w, h);
    let cell = (w.min(h) / 3).max(1);
    for v in 0..h {
        for u in 0..w {
            let k = if (u / cell + v / cell) % 2 == 0 { 1.0 } else { 0.3 };
            s.set(u, v, 1.0, scale_color(color, k));
        }
    }
    s
}

fn draw_wedge(w: usize, h: usize, color: [u8; 3], rng: &mut impl Rng) -> Stamp {
    let mut s = Stamp::new(w, h);
    let apex = rng.gen_range(0.0..w as f64);
    let c = scale_color(color, 1.0);
    for v in 0..h {
        // half-width grows linearly from the apex row to the base row
        let t = (v as f64 + 0.5) / h as f64;
        let left = apex * (1.0 - t);
        let right = apex + (w as f64 - apex) * t;
        for u in 0..w {
            let x = u as f64 + 0.5;
            s.set(u, v, (x - left + 0.5).min(right - x + 0.5), c);
        }
    }
    s
}

fn render(spec: &ArchetypeSpec, w: usize, h: usize, rng: &mut impl Rng) -> Stamp {
    let c = spec.color;
    match spec.archetype {
        Archetype::Crack => draw_crack(w, h, c, rng),
        Archetype::Blob => draw_ellipse(w, h, -1.0, |rho| scale_color(c, if rho > 0.72 { 0.35 } else { 1.0 })),
        Archetype::Patch => draw_patch(w, h, c, rng),
        Archetype::Stripes => draw_stripes(w, h, c, rng),
        Archetype::Ring => draw_ellipse(w, h, 0.55, |_| scale_color(c, 1.0)),
        Archetype::Checker => draw_checker(w, h, c),
        Archetype::Wedge => draw_wedge(w, h, c, rng),
        Archetype::Disc => draw_ellipse(w, h, -1.0, |_| scale_color(c, 1.0)),
    }
}

/// Long/short box sides for an archetype: stamps are drawn with the long
/// axis horizontal and transposed afterwards when needed.
fn sample_size(spec: &ArchetypeSpec, w: u32, h: u32, rng: &mut impl Rng) -> (usize, usize, bool) {
    let area = log_uniform(rng, spec.area) * w as f64 * h as f64;
    let aspect = log_uniform(rng, spec.aspect);
    let transpose = spec.transpose && rng.gen_bool(0.5);
    let bw = (area * aspect).sqrt();
    let bh = area / bw;
    let (bw, bh) = (bw.round().max(3.0) as usize, bh.round().max(3.0) as usize);
    (bw, bh, transpose)
}

/// Draws image `index` of the configured set.
pub fn generate_image(config: &SynthConfig, index: usize) -> Result<(Raster, Vec<ObjectLabel>)> {
    let mut rng = stream_rng(config.seed, index as u64);
    let mut canvas = Canvas::background(config.width, config.height, &config.background, &mut rng);
    let pick = WeightedIndex::new(&config.mix).map_err(|e| Error::invalid(format!("category mix: {e}")))?;
    let (lo, hi) = config.objects_per_image;
    let wanted = rng.gen_range(lo..=hi);
    let mut labels: Vec<ObjectLabel> = Vec::with_capacity(wanted);
    for _ in 0..wanted {
        let category = pick.sample(&mut rng);
        let spec = &config.archetypes[category];
        let mut placed = None;
        let mut fitted = false;
        for _ in 0..config.max_retries.max(1) {
            let (bw, bh, transpose) = sample_size(spec, config.width, config.height, &mut rng);
            let (fw, fh) = if transpose { (bh, bw) } else { (bw, bh) };
            if fw > config.width as usize || fh > config.height as usize {
                continue;
            }
            fitted = true;
            let x0 = rng.gen_range(0..=config.width as usize - fw);
            let y0 = rng.gen_range(0..=config.height as usize - fh);
            let coarse = BBox::new(x0 as f64, y0 as f64, (x0 + fw) as f64, (y0 + fh) as f64);
            if labels.iter().any(|l| iou(&l.bbox, &coarse) > config.max_overlap) {
                continue;
            }
            let mut stamp = render(spec, bw, bh, &mut rng);
            if transpose {
                stamp = stamp.transposed();
            }
            let Some((u0, v0, u1, v1)) = stamp.extent() else {
                continue;
            };
            let tight = BBox::new(
                (x0 + u0) as f64,
                (y0 + v0) as f64,
                (x0 + u1 + 1) as f64,
                (y0 + v1 + 1) as f64,
            );
            if labels.iter().any(|l| iou(&l.bbox, &tight) > config.max_overlap) {
                continue;
            }
            placed = Some((stamp, x0, y0, tight));
            break;
        }
        let Some((stamp, x0, y0, bbox)) = placed else {
            if !fitted {
                return Err(Error::invalid(format!(
                    "image {index}: no `{}` object fits {}x{} after {} tries",
                    config.categories[category], config.width, config.height, config.max_retries
                )));
            }
            // crowded image: skip this object
            continue;
        };
        for v in 0..stamp.h {
            for u in 0..stamp.w {
                let i = v * stamp.w + u;
                let a = stamp.alpha[i];
                if a > 0.0 {
                    let p = &mut canvas.px[(y0 + v) * canvas.width + x0 + u];
                    for c in 0..3 {
                        p[c] = p[c] * (1.0 - a) + stamp.color[i][c] * a;
                    }
                }
            }
        }
        labels.push(ObjectLabel { category, bbox });
    }
    if labels.is_empty() {
        return Err(Error::invalid(format!("image {index}: no object could be placed")));
    }
    Ok((canvas.into_raster(), labels))
}

pub fn image_name(index: usize) -> String {
    format!("img_{index:05}.png")
}

/// Generates the whole set with in-memory rasters.
pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let records = (0..config.count)
        .into_par_iter()
        .map(|i| {
            let (raster, labels) = generate_image(config, i)?;
            let mut r = ImageRecord::with_raster(image_name(i), raster);
            r.labels = labels;
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        records,
        categories: config.categories.clone(),
        base_dir: None,
    })
}

/// Writes every in-memory raster as PNG next to an annotation JSONL and
/// returns the JSONL path.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    dataset
        .records
        .par_iter()
        .map(|r| match &r.raster {
            Some(raster) => raster.save_png(&dir.join(&r.image)),
            None => Err(Error::invalid(format!("{}: no pixels to write", r.image))),
        })
        .collect::<Result<Vec<_>>>()?;
    let path = dir.join(ANNOTATIONS_FILE);
    save_jsonl(dataset, &path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::compute_stats;

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SynthConfig::preset(Preset::Target, 6, 96, 5);
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.raster.as_ref().unwrap().data(), y.raster.as_ref().unwrap().data());
        }
        let c = generate(&SynthConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn labels_are_inside_and_nonempty() {
        for preset in [Preset::Target, Preset::Source] {
            let ds = generate(&SynthConfig::preset(preset, 40, 128, 1)).unwrap();
            ds.validate().unwrap();
            for r in &ds.records {
                assert!(!r.labels.is_empty());
                for l in &r.labels {
                    assert!(l.bbox.area() > 0.0 && l.bbox.is_inside(128.0, 128.0));
                }
            }
        }
    }

    #[test]
    fn crack_boxes_are_elongated_and_blobs_round() {
        let ds = generate(&SynthConfig::preset(Preset::Target, 300, 128, 2)).unwrap();
        let elong = |cat: usize| {
            let mut v: Vec<f64> = ds
                .records
                .iter()
                .flat_map(|r| r.labels.iter())
                .filter(|l| l.category == cat)
                .map(|l| {
                    let (w, h) = (l.bbox.width(), l.bbox.height());
                    w.max(h) / w.min(h)
                })
                .collect();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        assert!(elong(0) > 4.0, "crack median elongation {}", elong(0));
        assert!(elong(1) < 1.3, "blob median elongation {}", elong(1));
    }

    #[test]
    fn impossible_scale_is_an_error() {
        let mut cfg = SynthConfig::preset(Preset::Target, 1, 16, 0);
        cfg.archetypes[0].area = (0.9, 1.0);
        cfg.archetypes[0].aspect = (8.0, 9.0);
        cfg.mix = vec![1.0, 0.0, 0.0, 0.0];
        cfg.max_retries = 10;
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn bad_mix_is_rejected() {
        let mut cfg = SynthConfig::preset(Preset::Target, 1, 64, 0);
        cfg.mix[0] = 0.5;
        assert!(cfg.validate().is_err());
        assert!("other".parse::<Preset>().is_err());
    }

    #[test]
    fn write_then_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(&SynthConfig::preset(Preset::Target, 3, 64, 9)).unwrap();
        let path = write_dataset(&ds, dir.path()).unwrap();
        let back = crate::dataset::load_jsonl(&path, &Default::default()).unwrap();
        assert_eq!(back, ds);
        let r = back.raster(1).unwrap();
        assert_eq!(r.data(), ds.records[1].raster.as_ref().unwrap().data());
    }

    #[test]
    fn median_relative_area_is_a_few_percent() {
        let ds = generate(&SynthConfig::preset(Preset::Target, 200, 128, 3)).unwrap();
        let s = compute_stats(&ds).unwrap();
        assert!((0.01..0.06).contains(&s.median_relative_area), "{}", s.median_relative_area);
    }
}
