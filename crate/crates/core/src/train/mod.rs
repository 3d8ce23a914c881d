//! Learning-rate schedule, SpecAugment, the optimization loop and
//! checkpoints.

mod augment;
mod checkpoint;
mod config;
mod schedule;
mod trainer;

pub use augment::{spec_augment, SpecAugmentConfig};
pub use checkpoint::{average_checkpoints, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use schedule::warmup_lr;
pub use trainer::{EpochMetrics, Example, StepMetrics, Trainer};
