//! Training, evaluation and synthetic data generation.

pub mod eval;
pub mod metrics;
pub mod synth;
pub mod train;

pub use eval::{evaluate, evaluate_infection_time, evaluate_next_user, next_user_rankings, EvalReport, StepRanking, TimePair};
pub use metrics::{hits_at, map_at, rmse};
pub use synth::{generate_synthetic, write_dataset, Synthetic, SynthConfig};
pub use train::{evaluate_loss, train, EpochLog, LossValues, TrainOutput};
