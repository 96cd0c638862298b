//! Dataset statistics, stratified partitions and source-class ranking.

use sddkit::dataset::{compute_stats, compute_stats_per_category, partition, rank_source_classes, PartitionMode, Split};
use sddkit::synthgen::{generate, Preset, SynthConfig};

fn main() -> sddkit::Result<()> {
    let target = generate(&SynthConfig::preset(Preset::Target, 60, 128, 1))?;
    let source = generate(&SynthConfig::preset(Preset::Source, 120, 128, 2))?;

    let stats = compute_stats(&target)?;
    println!("target: {} images, {} objects", stats.images, stats.total_objects);
    for (q, v) in &stats.relative_area_quantiles {
        println!("  relative area q{:.2} = {v:.4}", q);
    }

    if let Split::Holdout { train, test } = partition(&target, PartitionMode::Holdout { ratio: 0.8 }, 3)? {
        println!("holdout: {} train / {} test", train.len(), test.len());
    }
    let folds = partition(&target, PartitionMode::KFold { k: 5 }, 3)?;
    for i in 0..5 {
        let (tr, te) = folds.train_test(i);
        println!("fold {i}: {} train / {} test", tr.len(), te.len());
    }

    let ranking = rank_source_classes(&compute_stats_per_category(&source)?, &stats)?;
    println!("source classes, closest first:");
    for r in ranking {
        println!("  {:<10} hellinger {:.4}", r.name, r.distance);
    }
    Ok(())
}
