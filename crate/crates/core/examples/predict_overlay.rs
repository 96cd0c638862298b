//! Runs a checkpoint over images and writes box overlays. Without a
//! checkpoint argument a detector is trained briefly first.
//!
//! cargo run --release --example predict_overlay -- [checkpoint.sddk]

use sddkit::anchors::kmeans_anchors;
use sddkit::head::{predict_batch, PredictConfig};
use sddkit::nn::Checkpoint;
use sddkit::synthgen::{generate, Preset, SynthConfig};
use sddkit::train::{load_model, save_model, tl_harness, TlInputs, TlMode, TrainConfig};

fn main() -> sddkit::Result<()> {
    let size = 128;
    let out = std::env::temp_dir().join("sddkit_predict");
    std::fs::create_dir_all(&out).map_err(|e| sddkit::Error::io(&out, e))?;
    let ck_path = match std::env::args().nth(1) {
        Some(p) => p.into(),
        None => {
            let train = generate(&SynthConfig::preset(Preset::Target, 150, size, 1))?;
            let (anchors, _) = kmeans_anchors(&train, 9, &[size], 0, 200)?;
            let mut config = TrainConfig::toy(20, size, 0)?;
            config.val_every = 0;
            let inputs = TlInputs { target: &train, validation: None, source: None, donor: None, anchors: &anchors };
            let (mut model, _) = tl_harness(&inputs, TlMode::None, &config, None)?;
            let p = out.join("model.sddk");
            save_model(&mut model, &anchors, &train.categories, &config, "target", 20, &p)?;
            p
        }
    };
    let mut loaded = load_model(&Checkpoint::load(&ck_path)?)?;
    let images = generate(&SynthConfig::preset(Preset::Target, 4, size, 99))?;
    let cfg = PredictConfig { input_size: size, conf_threshold: 0.25, ..PredictConfig::default() };
    for i in 0..images.len() {
        let raster = images.raster(i)?;
        let dets = predict_batch(&mut loaded.model, &loaded.anchors, &[raster.as_ref()], &cfg)?.remove(0);
        let mut img = raster.as_ref().clone();
        for l in &images.records[i].labels {
            img.draw_box(&l.bbox, [0, 200, 0]);
        }
        for d in &dets {
            img.draw_box(&d.bbox, [255, 40, 40]);
        }
        let path = out.join(format!("overlay_{i}.png"));
        img.save_png(&path)?;
        println!("{}: {} detections, {} ground truth", path.display(), dets.len(), images.records[i].labels.len());
    }
    Ok(())
}
