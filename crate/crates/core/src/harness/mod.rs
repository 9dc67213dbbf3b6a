//! Experiment runner: datasets, configuration, the train/evaluate/log
//! cycle, checkpoints and file formats.

mod checkpoint;
mod config;
mod data;
pub mod formats;
mod metrics;
mod runner;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_VERSION,
};
pub use config::{
    apply_override, load_config, preset, EvalConfig, ExperimentConfig, TrainingConfig, PRESETS,
};
pub use data::{
    grid25_centers, make_dataset, ring8_centers, synthetic_shapes, DataSource, DatasetConfig,
};
pub use metrics::{
    log_metrics_csv, metrics_header, read_column, strip_wall_seconds, MetricsLog, MetricsRecord,
    METRICS_HEADER,
};
pub use runner::{run_experiment, RunPaths, RunStatus, RunSummary};
