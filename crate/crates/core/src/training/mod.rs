//! Seeded training loop: Adam, focal loss, drop-last batching, early
//! stopping on validation loss and resumable checkpoints.

mod config;
mod data;
mod history;
mod trainer;

pub use config::{LossKind, Precision, TrainConfig};
pub use data::SampleSet;
pub use history::{early_stop_check, EpochRecord, StopDecision, TrainHistory};
pub use trainer::{epoch_rng, evaluate, sequence_uf1, train, Trainer};
