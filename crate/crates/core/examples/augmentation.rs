//! Draws the augmentation pipeline many times, reports branch frequencies
//! and saves a few previews with their boxes drawn in.

use sddkit::augment::{augment_pipeline, AugmentConfig, Sample};
use sddkit::synthgen::{generate_image, Preset, SynthConfig};

fn main() -> sddkit::Result<()> {
    let synth = SynthConfig::preset(Preset::Target, 1, 160, 5);
    let (raster, labels) = generate_image(&synth, 0)?;
    let sample = Sample { raster, labels };
    let cfg = AugmentConfig { target_size: 160, seed: 9, ..AugmentConfig::default() };

    let n = 2000;
    let (mut geo, mut flip, mut photo) = (0, 0, 0);
    let out = std::env::temp_dir().join("sddkit_augment");
    std::fs::create_dir_all(&out).map_err(|e| sddkit::Error::io(&out, e))?;
    for i in 0..n {
        let (s, t) = augment_pipeline(&sample, &cfg, i);
        geo += t.geometric as usize;
        flip += t.flip.is_some() as usize;
        photo += t.photometric.is_some() as usize;
        if i < 6 {
            let mut r = s.raster.clone();
            for l in &s.labels {
                r.draw_box(&l.bbox, [255, 0, 0]);
            }
            r.save_png(&out.join(format!("draw_{i}.png")))?;
        }
    }
    let f = |k: usize| k as f64 / n as f64;
    println!("geometric {:.3} (expect 0.5)", f(geo));
    println!("flip      {:.3} (expect 0.333)", f(flip));
    println!("photo     {:.3} (expect 0.25)", f(photo));
    println!("previews in {}", out.display());
    Ok(())
}
