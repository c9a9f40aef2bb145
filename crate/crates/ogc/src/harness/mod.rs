//! Experiment harness: the training loop, loss queue, configuration, dataset
//! ingestion, metrics export, and the CLI-facing verify suite.

pub mod config;
pub mod data;
pub mod metrics;
pub mod queue;
pub mod train;
pub mod verify;

pub use config::ExperimentConfig;
pub use metrics::{last_k_epoch_mean_test_acc, write_metrics_csv, MetricsRecord, METRICS_HEADER};
pub use queue::LossQueue;
pub use train::{build_datasets, evaluate, export_distribution, train, TrainError, TrainOutput};
