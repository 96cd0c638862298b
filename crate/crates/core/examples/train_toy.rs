//! Trains the toy detector on synthetic data, saves a checkpoint and scores
//! it on a held-out set.
//!
//! cargo run --release --example train_toy -- [epochs] [train_images]

use sddkit::anchors::kmeans_anchors;
use sddkit::synthgen::{generate, Preset, SynthConfig};
use sddkit::train::{evaluate_model, load_model, save_model, tl_harness, TlInputs, TlMode, TrainConfig};

fn main() -> sddkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let n = args.next().and_then(|s| s.parse().ok()).unwrap_or(150);
    let size = 128;

    let train = generate(&SynthConfig::preset(Preset::Target, n, size, 1))?;
    let test = generate(&SynthConfig::preset(Preset::Target, 30, size, 2))?;
    let (anchors, _) = kmeans_anchors(&train, 9, &[size], 0, 200)?;
    let mut config = TrainConfig::toy(epochs, size, 0)?;
    config.val_every = 2;

    let out = std::env::temp_dir().join("sddkit_train");
    let inputs = TlInputs { target: &train, validation: Some(&test), source: None, donor: None, anchors: &anchors };
    let (mut model, report) = tl_harness(&inputs, TlMode::None, &config, Some(&out))?;
    for m in &report.metrics {
        println!(
            "epoch {:>3}  lr {:.0e}  loss {:8.3}  mAP50 {}",
            m.epoch,
            m.lr,
            m.loss,
            m.map50.map_or("-".into(), |v| format!("{v:.3}"))
        );
    }

    let path = out.join("model.sddk");
    save_model(&mut model, &anchors, &train.categories, &config, "target", epochs, &path)?;
    let mut loaded = load_model(&sddkit::nn::Checkpoint::load(&path)?)?;
    let ap = evaluate_model(&mut loaded.model, &loaded.anchors, &test, size, 0.01)?;
    println!("reloaded checkpoint: mAP50 {:.3}  mAP75 {:.3}", ap.map_at(0.5).unwrap_or(0.0), ap.map_at(0.75).unwrap_or(0.0));
    Ok(())
}
