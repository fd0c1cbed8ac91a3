//! Files on disk: experiment configs, datasets, checkpoints and CSV tables.

mod binary;
mod checkpoint;
mod config;
mod csv;
mod dataset;

pub use checkpoint::{
    surrogate_checkpoint, surrogate_from_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, SURROGATE_KIND,
};
pub use config::*;
pub use csv::{
    read_metrics_csv, render_eye_csv, render_metrics_csv, write_eye_csv, write_metrics_csv, MetricsRow, METRICS_HEADER,
};
pub use dataset::{
    open_dataset, read_dataset_file, write_dataset, write_dataset_file, DatasetReader, DATASET_MAGIC, DATASET_VERSION,
};
