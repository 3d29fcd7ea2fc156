//! Training infrastructure: optimizers, configuration, metrics, checkpoints
//! and the train/evaluate loops.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod optim;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{OptimizerKind, TaskKind, TrainConfig};
pub use metrics::{MetricsRow, MetricsWriter};
pub use optim::{adam_step, clip_global_norm, rmsprop_step, Optimizer};
pub use train::{evaluate, train, EvalResult, TaskData, TrainSummary};
