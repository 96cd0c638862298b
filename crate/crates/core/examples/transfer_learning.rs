//! No transfer against the two-phase protocol: pretrain on the source
//! classes closest in scale and aspect, restore every layer, fine-tune.

use sddkit::anchors::kmeans_anchors;
use sddkit::synthgen::{generate, Preset, SynthConfig};
use sddkit::train::{tl_harness, TlInputs, TlMode, TrainConfig};

fn main() -> sddkit::Result<()> {
    let size = 96;
    let target = generate(&SynthConfig::preset(Preset::Target, 40, size, 1))?;
    let val = generate(&SynthConfig::preset(Preset::Target, 20, size, 2))?;
    let source = generate(&SynthConfig::preset(Preset::Source, 160, size, 3))?;
    let (anchors, _) = kmeans_anchors(&target, 9, &[size], 0, 200)?;
    let mut config = TrainConfig::toy(8, size, 0)?;
    config.val_every = 0;

    let inputs = TlInputs { target: &target, validation: Some(&val), source: Some(&source), donor: None, anchors: &anchors };
    for mode in [TlMode::None, TlMode::B] {
        let (_, r) = tl_harness(&inputs, mode, &config, None)?;
        for p in &r.phases {
            println!("{mode:?} {:<7} epochs {}..={} on {} images {:?}", p.name, p.first_epoch, p.last_epoch, p.images, p.categories);
        }
        println!("{mode:?} mAP50 {:.3}", r.map50.unwrap_or(0.0));
    }
    Ok(())
}
