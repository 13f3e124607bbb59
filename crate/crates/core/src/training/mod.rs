//! Replay of partial trajectories, the CF-prediction objective with its
//! baselines, and the representation-training loop.

mod bound;
pub mod losses;
mod replay;
mod trainer;

pub use bound::{upper_bound_check, UpperBoundReport};
pub use losses::{cresp_loss, cresp_sum_loss, info_nce, rdp_contrastive_loss, rp_loss, rp_sum_loss};
pub use replay::{ReplayBuffer, TrajectorySegment, Transition};
pub use trainer::{
    train_representation, train_with, MetricRecord, Model, Objective, PredictorOutput, TrainConfig, TrainOutcome,
};
