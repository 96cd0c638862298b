//! Subcommand dispatch for the `sddkit` executable. Machine output is one
//! JSON document on stdout; logs go to stderr.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::anchors::{anchor_quality, kmeans_anchors, AnchorSet};
use crate::augment::{augment_pipeline, AugmentConfig, Sample};
use crate::dataset::{
    compute_stats, compute_stats_per_category, default_categories, load, partition, rank_source_classes, save_jsonl,
    CategorySpec, Dataset, Format, PartitionMode, Split,
};
use crate::error::{Error, Result};
use crate::eval::{load_detections, mean_ap, save_detections, DEFAULT_THRESHOLDS};
use crate::head::{predict_batch, PredictConfig};
use crate::nn::{Checkpoint, NormMode};
use crate::selfcheck::{run_gradient_suite, DEFAULT_TOL};
use crate::synthgen::{generate, write_dataset, Preset, SynthConfig};
use crate::train::{load_model, save_model, tl_harness, LrSchedule, TlInputs, TlMode, TrainConfig, TOY_MS_SIZES};

pub const THREADS_ENV: &str = "SDDKIT_THREADS";

/// Exit code and JSON payload of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandResult {
    pub code: i32,
    pub payload: Option<Value>,
    /// Usage or help text for stderr/stdout when argument parsing stopped.
    pub message: Option<String>,
}

#[derive(Parser, Debug)]
#[command(name = "sddkit", version, about = "Surface-damage detector toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct DataArg {
    /// Annotation file (JSONL) or LabelImg XML file/directory.
    #[arg(long)]
    data: PathBuf,
    /// `auto`, `default`, `discover`, or a comma-separated name list.
    #[arg(long, default_value = "auto")]
    categories: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (PNG files plus annotations.jsonl).
    Synth {
        #[arg(long, value_enum, default_value_t = PresetArg::Target)]
        preset: PresetArg,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 128)]
        size: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Category counts, relative-area quantiles and scale/aspect histogram.
    Stats {
        #[command(flatten)]
        data: DataArg,
        /// Also report every category on its own.
        #[arg(long)]
        per_category: bool,
    },
    /// Holdout or stratified k-fold partition, written as JSONL files.
    Split {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, value_enum, default_value_t = SplitMode::Holdout)]
        mode: SplitMode,
        /// Train fraction for holdout.
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// IoU k-means anchors pooled over the input sizes.
    Anchors {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, default_value_t = 9)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated input sides the boxes are letterboxed to.
        #[arg(long, value_delimiter = ',', default_values_t = TOY_MS_SIZES.to_vec())]
        sizes: Vec<u32>,
        #[arg(long, default_value_t = 300)]
        max_iter: usize,
    },
    /// Draw augmentations of one record and report which branches fired.
    Augment {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 8)]
        draws: usize,
        #[arg(long, default_value_t = 416)]
        size: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write each draw as PNG with its boxes drawn in.
        #[arg(long)]
        preview: Option<PathBuf>,
    },
    /// Finite-difference check of every registered differentiable op.
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Train the toy detector, optionally through a transfer protocol.
    Train(TrainArgs),
    /// Score detections against ground truth (AP per class, mAP50/75).
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        dets: PathBuf,
        #[arg(long, default_value = "auto")]
        categories: String,
    },
    /// Run a checkpoint over a dataset and write detection JSONL.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, default_value_t = 416)]
        size: u32,
        #[arg(long, default_value_t = 0.25)]
        conf: f64,
        #[arg(long, default_value_t = 0.45)]
        nms: f64,
        #[arg(long)]
        out: PathBuf,
        /// Directory for box-overlay PNGs.
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
    /// Order source categories by scale/aspect similarity to a target set.
    RankSources {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value = "auto")]
        categories: String,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArg,
    #[arg(long)]
    val_data: Option<PathBuf>,
    #[arg(long)]
    source_data: Option<PathBuf>,
    /// Checkpoint whose backbone seeds TL-A.
    #[arg(long)]
    donor: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TlArg::None)]
    tl: TlArg,
    #[arg(long, default_value_t = 80)]
    epochs: usize,
    #[arg(long, default_value_t = 2)]
    batch: usize,
    /// Comma-separated training sides drawn per batch.
    #[arg(long, value_delimiter = ',', default_values_t = TOY_MS_SIZES.to_vec())]
    sizes: Vec<u32>,
    #[arg(long, default_value_t = 512)]
    val_size: u32,
    #[arg(long, default_value_t = 5)]
    val_every: usize,
    #[arg(long, value_enum, default_value_t = NormArg::Br)]
    norm: NormArg,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1)]
    width: usize,
    /// Anchor JSON from the `anchors` subcommand; k-means on the training
    /// set when absent.
    #[arg(long)]
    anchors: Option<PathBuf>,
    /// Disable augmentation (letterbox only).
    #[arg(long)]
    no_augment: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum PresetArg {
    Target,
    Source,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum SplitMode {
    Holdout,
    Kfold,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum TlArg {
    None,
    A,
    B,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum NormArg {
    Bn,
    Br,
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> CommandResult
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 2,
                _ => 2,
            };
            return CommandResult {
                code,
                payload: None,
                message: Some(e.render().to_string()),
            };
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok((code, payload)) => CommandResult {
            code,
            payload: Some(payload),
            message: None,
        },
        Err(e) => CommandResult {
            code: 1,
            payload: Some(json!({"error": {"kind": e.kind(), "message": e.to_string()}})),
            message: None,
        },
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        // a second build in the same process is refused; the first one wins
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn category_spec(arg: &str) -> Option<CategorySpec> {
    match arg {
        "auto" => None,
        "default" => Some(CategorySpec::Fixed(default_categories())),
        "discover" => Some(CategorySpec::Discover),
        list => Some(CategorySpec::Fixed(list.split(',').map(|s| s.trim().to_string()).collect())),
    }
}

/// Loads a dataset. `auto` discovers names and switches to the default
/// damage table when every discovered name belongs to it.
fn load_with(path: &Path, categories: &str) -> Result<Dataset> {
    let format = Format::detect(path);
    match category_spec(categories) {
        Some(spec) => load(path, format, &spec),
        None => {
            let ds = load(path, format, &CategorySpec::Discover)?;
            let defaults = default_categories();
            if ds.categories.iter().all(|c| defaults.contains(c)) {
                load(path, format, &CategorySpec::Fixed(defaults))
            } else {
                Ok(ds)
            }
        }
    }
}

fn load_data(d: &DataArg) -> Result<Dataset> {
    load_with(&d.data, &d.categories)
}

/// Copy of `ds` whose image paths resolve from `dir`.
fn rebased(ds: &Dataset, dir: &Path) -> Dataset {
    let mut out = ds.clone();
    if let Some(base) = &ds.base_dir {
        let base = base.canonicalize().unwrap_or_else(|_| base.clone());
        let same = dir.canonicalize().map(|d| d == base).unwrap_or(false);
        if !same {
            for r in &mut out.records {
                if Path::new(&r.image).is_relative() {
                    r.image = base.join(&r.image).to_string_lossy().into_owned();
                }
            }
        }
    }
    out.base_dir = Some(dir.to_path_buf());
    out
}

fn write_subset(ds: &Dataset, idx: &[usize], dir: &Path, name: &str) -> Result<Value> {
    let path = dir.join(name);
    save_jsonl(&rebased(&ds.subset(idx), dir), &path)?;
    Ok(json!({"file": path, "images": idx.len()}))
}

fn read_anchors(path: &Path) -> Result<AnchorSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: Value = serde_json::from_str(&text)?;
    let inner = v.get("anchors").filter(|a| a.is_object()).cloned().unwrap_or(v);
    Ok(serde_json::from_value(inner)?)
}

fn dispatch(command: Command) -> Result<(i32, Value)> {
    match command {
        Command::Synth {
            preset,
            n,
            size,
            seed,
            out,
        } => {
            let preset = match preset {
                PresetArg::Target => Preset::Target,
                PresetArg::Source => Preset::Source,
            };
            let ds = generate(&SynthConfig::preset(preset, n, size, seed))?;
            let path = write_dataset(&ds, &out)?;
            let stats = compute_stats(&ds)?;
            Ok((0, json!({"annotations": path, "images": ds.len(), "objects": ds.num_labels(), "counts": stats.counts, "categories": ds.categories})))
        }
        Command::Stats { data, per_category } => {
            let ds = load_data(&data)?;
            let mut v = serde_json::to_value(compute_stats(&ds)?)?;
            if per_category {
                let per: Vec<Value> = compute_stats_per_category(&ds)?
                    .into_iter()
                    .map(|(c, s)| json!({"category": ds.categories[c], "stats": s}))
                    .collect();
                v["per_category"] = Value::Array(per);
            }
            Ok((0, v))
        }
        Command::Split {
            data,
            mode,
            ratio,
            k,
            seed,
            out,
        } => {
            let ds = load_data(&data)?;
            let pm = match mode {
                SplitMode::Holdout => PartitionMode::Holdout { ratio },
                SplitMode::Kfold => PartitionMode::KFold { k },
            };
            let split = partition(&ds, pm, seed)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let files = match &split {
                Split::Holdout { train, test } => vec![
                    write_subset(&ds, train, &out, "train.jsonl")?,
                    write_subset(&ds, test, &out, "test.jsonl")?,
                ],
                Split::KFold { folds } => {
                    let mut v = Vec::new();
                    for i in 0..folds.len() {
                        let (tr, te) = split.train_test(i);
                        v.push(write_subset(&ds, &tr, &out, &format!("fold{i}_train.jsonl"))?);
                        v.push(write_subset(&ds, &te, &out, &format!("fold{i}_test.jsonl"))?);
                    }
                    v
                }
            };
            Ok((0, json!({"split": split, "files": files})))
        }
        Command::Anchors {
            data,
            k,
            seed,
            sizes,
            max_iter,
        } => {
            let ds = load_data(&data)?;
            let (anchors, result) = kmeans_anchors(&ds, k, &sizes, seed, max_iter)?;
            let quality: Vec<Value> = sizes
                .iter()
                .map(|&s| json!({"size": s, "quality": anchor_quality(&anchors, &ds, s)}))
                .collect();
            Ok((0, json!({"anchors": anchors, "objective": result.objective, "iterations": result.iterations, "sizes": sizes, "quality": quality})))
        }
        Command::Augment {
            data,
            index,
            draws,
            size,
            seed,
            preview,
        } => {
            let ds = load_data(&data)?;
            if index >= ds.len() {
                return Err(Error::invalid(format!("index {index} out of {} records", ds.len())));
            }
            let sample = Sample {
                raster: ds.raster(index)?.as_ref().clone(),
                labels: ds.records[index].labels.clone(),
            };
            let cfg = AugmentConfig {
                target_size: size,
                seed,
                ..AugmentConfig::default()
            };
            cfg.validate()?;
            if let Some(dir) = &preview {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let mut out = Vec::with_capacity(draws);
            for i in 0..draws {
                let (s, trace) = augment_pipeline(&sample, &cfg, i as u64);
                if let Some(dir) = &preview {
                    let mut r = s.raster.clone();
                    for l in &s.labels {
                        r.draw_box(&l.bbox, [255, 0, 0]);
                    }
                    r.save_png(&dir.join(format!("draw_{i:03}.png")))?;
                }
                let boxes: Vec<[f64; 4]> = s.labels.iter().map(|l| l.bbox.to_array()).collect();
                out.push(json!({"draw": i, "trace": trace, "boxes": boxes}));
            }
            Ok((0, json!({"image": ds.records[index].image, "size": size, "draws": out})))
        }
        Command::Gradcheck { tol } => {
            let reports = run_gradient_suite(tol);
            let passed = reports.iter().all(|r| r.passed);
            Ok((if passed { 0 } else { 1 }, json!({"passed": passed, "tol": tol, "checks": reports})))
        }
        Command::Train(args) => train(args),
        Command::Eval { gt, dets, categories } => {
            let ds = load_with(&gt, &categories)?;
            let d = load_detections(&dets, &ds)?;
            Ok((0, mean_ap(&d, &ds, &DEFAULT_THRESHOLDS)?.to_json()))
        }
        Command::Predict {
            checkpoint,
            data,
            size,
            conf,
            nms,
            out,
            overlay,
        } => {
            let ds = load_data(&data)?;
            let mut loaded = load_model(&Checkpoint::load(&checkpoint)?)?;
            if !loaded.categories.is_empty() && loaded.categories != ds.categories {
                return Err(Error::invalid(format!(
                    "checkpoint categories {:?} differ from the dataset's {:?}",
                    loaded.categories, ds.categories
                )));
            }
            let cfg = PredictConfig {
                input_size: size,
                conf_threshold: conf,
                nms_threshold: nms,
            };
            if let Some(dir) = &overlay {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let mut all = Vec::with_capacity(ds.len());
            for i in 0..ds.len() {
                let r = ds.raster(i)?;
                let dets = predict_batch(&mut loaded.model, &loaded.anchors, &[r.as_ref()], &cfg)?
                    .pop()
                    .unwrap_or_default();
                if let Some(dir) = &overlay {
                    let mut img = r.as_ref().clone();
                    for d in &dets {
                        img.draw_box(&d.bbox, [255, 40, 40]);
                    }
                    let name = Path::new(&ds.records[i].image)
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| format!("{i:05}"));
                    img.save_png(&dir.join(format!("{name}.png")))?;
                }
                all.push(dets);
            }
            save_detections(&out, &ds, &all)?;
            let total: usize = all.iter().map(Vec::len).sum();
            Ok((0, json!({"detections": out, "images": ds.len(), "total": total})))
        }
        Command::RankSources {
            source,
            target,
            categories,
        } => {
            let s = load_with(&source, &categories)?;
            let t = load_with(&target, &categories)?;
            let ranking = rank_source_classes(&compute_stats_per_category(&s)?, &compute_stats(&t)?)?;
            Ok((0, json!({"ranking": ranking})))
        }
    }
}

fn train(args: TrainArgs) -> Result<(i32, Value)> {
    let target = load_data(&args.data)?;
    let val = args
        .val_data
        .as_ref()
        .map(|p| load_with(p, &args.data.categories))
        .transpose()?;
    let source = args
        .source_data
        .as_ref()
        .map(|p| load_with(p, "discover"))
        .transpose()?;
    let donor = args.donor.as_ref().map(Checkpoint::load).transpose()?;
    let mut config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        schedule: LrSchedule::staged().scaled_to(args.epochs)?,
        sizes: args.sizes.clone(),
        seed: args.seed,
        norm: match args.norm {
            NormArg::Bn => NormMode::BatchNorm,
            NormArg::Br => NormMode::renorm(),
        },
        width_multiplier: args.width,
        val_every: args.val_every,
        val_size: args.val_size,
        ..TrainConfig::default()
    };
    config.loss.gamma = args.gamma;
    if args.no_augment {
        config.augment = AugmentConfig::disabled(32);
    }
    let anchors = match &args.anchors {
        Some(p) => read_anchors(p)?,
        None => kmeans_anchors(&target, 9, &args.sizes, args.seed, 300)?.0,
    };
    let mode = match args.tl {
        TlArg::None => TlMode::None,
        TlArg::A => TlMode::A,
        TlArg::B => TlMode::B,
    };
    let inputs = TlInputs {
        target: &target,
        validation: val.as_ref(),
        source: source.as_ref(),
        donor: donor.as_ref(),
        anchors: &anchors,
    };
    let (mut model, report) = tl_harness(&inputs, mode, &config, Some(&args.out))?;
    let final_path = args.out.join("final.sddk");
    save_model(&mut model, &anchors, &target.categories, &config, "final", config.epochs, &final_path)?;
    Ok((0, json!({"checkpoint": final_path, "anchors": anchors, "report": report})))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_subcommand_is_usage_error() {
        let r = run(["sddkit", "frobnicate"]);
        assert_eq!(r.code, 2);
        assert!(r.payload.is_none() && r.message.is_some());
        assert_eq!(run(["sddkit", "anchors", "--bogus"]).code, 2);
    }

    #[test]
    fn help_exits_zero() {
        let r = run(["sddkit", "train", "--help"]);
        assert_eq!(r.code, 0);
        assert!(r.message.unwrap().contains("--tl"));
    }

    #[test]
    fn operational_failure_is_structured() {
        let r = run(["sddkit", "stats", "--data", "/nonexistent/x.jsonl"]);
        assert_eq!(r.code, 1);
        assert_eq!(r.payload.unwrap()["error"]["kind"], "io");
    }

    #[test]
    fn category_arguments() {
        assert_eq!(category_spec("auto"), None);
        assert_eq!(category_spec("discover"), Some(CategorySpec::Discover));
        assert_eq!(
            category_spec("a, b"),
            Some(CategorySpec::Fixed(vec!["a".into(), "b".into()]))
        );
    }
}
