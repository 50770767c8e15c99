//! Training, checkpointing, prediction, evaluation and ablation runs.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod evaluate;
pub mod optim;
pub mod predict;
pub mod train;

pub use checkpoint::{Checkpoint, Stage};
pub use config::RunConfig;
pub use data::{SampleImages, DATA_ROOT_ENV};
