//! IoU k-means anchors on a synthetic set, pooled over several input sizes.

use sddkit::anchors::{anchor_quality, kmeans_anchors, AnchorSet};
use sddkit::synthgen::{generate, Preset, SynthConfig};

fn main() -> sddkit::Result<()> {
    let ds = generate(&SynthConfig::preset(Preset::Target, 120, 128, 11))?;
    let sizes = [96, 128, 160];
    let (anchors, fit) = kmeans_anchors(&ds, 9, &sizes, 0, 300)?;
    println!("objective {:.3} after {} iterations", fit.objective, fit.iterations);
    for level in 0..3 {
        println!("level {level}: {:?}", anchors.level_anchors(level));
    }
    let fixed = AnchorSet::bridge_default().scaled(128.0 / 416.0);
    for (name, a) in [("k-means", &anchors), ("scaled default", &fixed)] {
        let q = anchor_quality(a, &ds, 128);
        println!("{name:<15} avg best IoU {:.3}  recall@0.5 {:.3}", q.avg_best_iou, q.recall_at_05);
    }
    Ok(())
}
