//! Generates a small synthetic damage dataset and writes it to disk.
//!
//! cargo run --release --example synth_dataset -- [out_dir] [count]

use std::path::PathBuf;

use sddkit::dataset::compute_stats;
use sddkit::synthgen::{generate, write_dataset, Preset, SynthConfig};

fn main() -> sddkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("sddkit_synth"));
    let count = args.next().and_then(|s| s.parse().ok()).unwrap_or(24);

    let ds = generate(&SynthConfig::preset(Preset::Target, count, 128, 7))?;
    let ann = write_dataset(&ds, &out)?;
    let stats = compute_stats(&ds)?;
    println!("wrote {} images, {} objects to {}", ds.len(), ds.num_labels(), ann.display());
    for (name, n) in stats.categories.iter().zip(&stats.counts) {
        println!("  {name:<14} {n}");
    }
    println!("median relative area {:.4}", stats.median_relative_area);
    Ok(())
}
