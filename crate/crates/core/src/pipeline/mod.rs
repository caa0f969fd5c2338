//! Datasets, training, enhancement, metrics, evaluation and checkpoint I/O.

pub mod config;
pub mod dataset;
pub mod enhance;
pub mod evaluate;
pub mod metrics;
pub mod model;
pub mod persist;
pub mod train;

pub use config::{Ablation, DataConfig, LrSchedule, TrainConfig};
pub use dataset::{ingest, load_image, save_png, toy_corpus, toy_dataset, Dataset, ImageRecord, Split};
pub use enhance::{enhance, start_noise, EnhanceOptions, Enhanced};
pub use evaluate::{
    degraded_baseline, degraded_input, eval_items, evaluate, evaluate_with, measure_throughput, EvalItem, ImageMetrics,
    MetricReport, Throughput,
};
pub use metrics::{psnr, ssim, PSNR_IDENTICAL};
pub use model::{FlowModel, NetField};
pub use persist::{load_checkpoint, load_tau_checkpoint, save_checkpoint, save_tau_checkpoint, SavedRun};
pub use train::{oracle_batch_loss, prepare_samples, tau_step, train_step, FlowSample, StepStats, Trainer};
