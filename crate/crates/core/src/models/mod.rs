//! The six compared model families, their joint loss, training and inference.

mod checkpoint;
mod config;
mod forward;
mod model;
mod predict;
mod train;

pub use checkpoint::{CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{Family, ModelConfig};
pub use forward::{Batch, BottleneckOutput, LossBreakdown, Substitution};
pub use model::{EpochStats, Model};
pub use predict::{summarize, CycleDetail, CyclePrediction};
pub use train::{fit, train, train_observed, TrainObserver};
