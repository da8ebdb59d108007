//! Experiment orchestration: configs, training runs, ablation protocols,
//! metric logs and reports.

pub mod checkpoint;
pub mod config;
pub mod earlystop;
pub mod metrics;
pub mod overhead;
pub mod report;
pub mod ticket;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{presets, DataConfig, DataKind, Method, RunConfig};
pub use metrics::{EpochRow, MetricLog};
pub use train::{compress_iterative, evaluate, load_data, train, CompressionEvent, Datasets, RunSummary, Trainer};
