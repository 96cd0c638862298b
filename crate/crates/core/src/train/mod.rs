//! Toy detector, learning-rate schedule, training loop and the transfer
//! learning harness.

mod model;
mod schedule;
mod trainer;
mod transfer;

pub use model::{build_toy_detector, is_backbone, xavier_bound, DetectorModel, ModelConfig};
pub use schedule::LrSchedule;
pub use trainer::{
    effective_size, evaluate_model, load_model, read_metrics, save_model, train_loop, EpochMetrics, LoadedModel,
    LoopOptions, TrainConfig, TrainReport, DIAGNOSTIC_CHECKPOINT, METRICS_FILE, TOY_MS_SIZES,
};
pub use transfer::{select_source, source_epochs, tl_harness, PhaseSummary, TlInputs, TlMode, TlReport, SOURCE_SHARE};
