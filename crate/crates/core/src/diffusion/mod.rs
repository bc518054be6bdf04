//! Variance schedule, forward noising, posterior step, loss and training loop.

mod loss;
mod schedule;
pub mod train;

pub use loss::{loss_weights, training_loss};
pub use schedule::{cosine_schedule, q_sample, reverse_step, DiffusionSchedule};
pub use train::{prepare_training_set, train, write_loss_csv, LossRecord, TrainConfig, TrainOutcome, Trainer, TrainingSample, TrainingSet};
