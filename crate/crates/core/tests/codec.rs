use sddkit::dataset::{load, save, CategorySpec, Format};
use sddkit::synthgen::{generate, write_dataset, Preset, SynthConfig};

#[test]
fn voc_and_jsonl_agree() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&SynthConfig::preset(Preset::Target, 8, 96, 4)).unwrap();
    let ann = write_dataset(&ds, dir.path()).unwrap();
    let spec = CategorySpec::Fixed(ds.categories.clone());
    let from_jsonl = load(&ann, Format::Jsonl, &spec).unwrap();

    let voc = dir.path().join("voc");
    save(&from_jsonl, &voc, Format::VocXml).unwrap();
    let from_voc = load(&voc, Format::VocXml, &spec).unwrap();
    assert_eq!(from_voc.len(), from_jsonl.len());
    for (a, b) in from_jsonl.records.iter().zip(&from_voc.records) {
        assert_eq!(a.labels.len(), b.labels.len());
        for (x, y) in a.labels.iter().zip(&b.labels) {
            assert_eq!(x.category, y.category);
            for (p, q) in x.bbox.to_array().iter().zip(y.bbox.to_array()) {
                assert!((p - q).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn discovered_categories_follow_first_appearance() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&SynthConfig::preset(Preset::Source, 20, 64, 1)).unwrap();
    let ann = write_dataset(&ds, dir.path()).unwrap();
    let back = load(&ann, Format::detect(&ann), &CategorySpec::Discover).unwrap();
    assert_eq!(back.num_labels(), ds.num_labels());
    let mut names = back.categories.clone();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), back.categories.len());
}
