//! Average precision on a hand-made set of detections.

use sddkit::dataset::{Dataset, ImageRecord, ObjectLabel};
use sddkit::eval::{mean_ap, DEFAULT_THRESHOLDS};
use sddkit::geometry::{BBox, Detection};

fn main() -> sddkit::Result<()> {
    let mut ds = Dataset::new(vec!["crack".into(), "spalling".into()]);
    let mut rec = ImageRecord::new("a.png", 100, 100);
    rec.labels = vec![
        ObjectLabel { category: 0, bbox: BBox::new(10.0, 10.0, 40.0, 20.0) },
        ObjectLabel { category: 1, bbox: BBox::new(50.0, 50.0, 90.0, 90.0) },
    ];
    ds.records.push(rec);

    let det = |c, conf, b: [f64; 4]| Detection { bbox: BBox::new(b[0], b[1], b[2], b[3]), category: c, confidence: conf };
    let dets = vec![vec![
        det(0, 0.9, [11.0, 10.0, 40.0, 21.0]),
        det(0, 0.6, [60.0, 10.0, 80.0, 20.0]),
        det(1, 0.8, [52.0, 48.0, 88.0, 92.0]),
        det(1, 0.3, [50.0, 50.0, 70.0, 70.0]),
    ]];
    let ap = mean_ap(&dets, &ds, &DEFAULT_THRESHOLDS)?;
    println!("{}", serde_json::to_string_pretty(&ap.to_json()).expect("json"));
    Ok(())
}
