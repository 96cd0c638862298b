use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sddkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sddkit"))
        .args(args)
        .env("SDDKIT_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn sddkit")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_usage_codes() {
    let h = sddkit(&["--help"]);
    assert_eq!(h.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&h.stdout).contains("rank-sources"));
    assert_eq!(sddkit(&["train"]).status.code(), Some(2));
    assert_eq!(sddkit(&["synth", "--n", "x", "--out", "/tmp"]).status.code(), Some(2));
}

#[test]
fn operational_errors_are_json() {
    let out = sddkit(&["anchors", "--data", "/definitely/missing.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    let v = json(&out);
    assert_eq!(v["error"]["kind"], "io");
    assert!(v["error"]["message"].as_str().unwrap().contains("missing.jsonl"));
}

#[test]
fn gradcheck_exit_code_follows_tolerance() {
    let ok = sddkit(&["gradcheck"]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(json(&ok)["passed"], true);
    let strict = sddkit(&["gradcheck", "--tol", "1e-15"]);
    assert_eq!(strict.status.code(), Some(1));
    assert_eq!(json(&strict)["passed"], false);
}

#[test]
fn synth_to_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = sddkit(&["synth", "--n", "12", "--size", "64", "--seed", "3", "--out", s(&data)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ann = data.join("annotations.jsonl");
    assert_eq!(json(&out)["images"], 12);

    let stats = json(&sddkit(&["stats", "--data", s(&ann), "--per-category"]));
    assert_eq!(stats["images"], 12);
    assert_eq!(stats["categories"].as_array().unwrap().len(), 4);

    let splits = dir.path().join("splits");
    let sp = sddkit(&["split", "--data", s(&ann), "--ratio", "0.75", "--out", s(&splits)]);
    assert_eq!(sp.status.code(), Some(0));
    // rebased paths still resolve from the split directory
    let st = json(&sddkit(&["stats", "--data", s(&splits.join("train.jsonl"))]));
    assert_eq!(st["images"], 9);

    let anchors = sddkit(&["anchors", "--data", s(&ann), "--sizes", "64", "--k", "9"]);
    let av = json(&anchors);
    assert_eq!(av["anchors"]["anchors"].as_array().unwrap().len(), 9);
    let anchor_file = dir.path().join("anchors.json");
    std::fs::write(&anchor_file, &anchors.stdout).unwrap();

    let aug = json(&sddkit(&["augment", "--data", s(&ann), "--draws", "3", "--size", "64"]));
    assert_eq!(aug["draws"].as_array().unwrap().len(), 3);

    let run = dir.path().join("run");
    let tr = sddkit(&[
        "train", "--data", s(&ann), "--val-data", s(&ann), "--epochs", "4", "--sizes", "64", "--val-size", "64",
        "--val-every", "2", "--anchors", s(&anchor_file), "--no-augment", "--out", s(&run),
    ]);
    assert_eq!(tr.status.code(), Some(0), "{}", String::from_utf8_lossy(&tr.stdout));
    let tv = json(&tr);
    assert_eq!(tv["report"]["metrics"].as_array().unwrap().len(), 4);
    assert!(run.join("metrics.jsonl").exists());
    let ck = run.join("final.sddk");
    assert!(ck.exists());

    let dets = dir.path().join("dets.jsonl");
    let overlay = dir.path().join("overlay");
    let pr = sddkit(&[
        "predict", "--checkpoint", s(&ck), "--data", s(&ann), "--size", "64", "--conf", "0.01", "--out", s(&dets),
        "--overlay", s(&overlay),
    ]);
    assert_eq!(pr.status.code(), Some(0), "{}", String::from_utf8_lossy(&pr.stdout));
    assert_eq!(std::fs::read_dir(&overlay).unwrap().count(), 12);

    let ev = json(&sddkit(&["eval", "--gt", s(&ann), "--dets", s(&dets)]));
    let m = ev["map50"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&m));
}

#[test]
fn rank_sources_orders_by_distance() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t");
    let src = dir.path().join("s");
    assert!(sddkit(&["synth", "--n", "10", "--size", "64", "--out", s(&t)]).status.success());
    assert!(sddkit(&["synth", "--preset", "source", "--n", "30", "--size", "64", "--out", s(&src)]).status.success());
    let v = json(&sddkit(&[
        "rank-sources",
        "--source",
        s(&src.join("annotations.jsonl")),
        "--target",
        s(&t.join("annotations.jsonl")),
    ]));
    let d: Vec<f64> = v["ranking"].as_array().unwrap().iter().map(|r| r["distance"].as_f64().unwrap()).collect();
    assert!(d.len() >= 4);
    assert!(d.windows(2).all(|w| w[0] <= w[1]));
}
