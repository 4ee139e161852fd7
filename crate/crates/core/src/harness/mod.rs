//! Configuration, PK sampling, optimization, checkpointing, evaluation and
//! the ablation driver.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod evaluate;
pub mod optim;
pub mod pipeline_check;
pub mod sampler;
pub mod train;

pub use ablation::{ablation, AblationRow, AblationTable};
pub use checkpoint::Checkpoint;
pub use config::ExperimentConfig;
pub use evaluate::{evaluate, EmbeddingReport, Evaluation, GateStats};
pub use train::{train, train_with, EpochLoss, TrainOutcome};
