//! PPO training with a reward-threshold curriculum and difficulty-based
//! reference selection.

mod config;
mod curriculum;
mod data;
mod ppo;
mod sampling;
mod train;
mod trajectory;

pub use config::{Sampling, TrainConfig, CONFIG_KEYS};
pub use curriculum::{curriculum_horizon, schedule_thresh};
pub use data::{
    cluster_representatives, kmedoids, perceptual_distances, prepare_dataset, Clustering, Dataset, PatchOrigin,
    PrepOptions, ReferenceStats,
};
pub use ppo::{
    batch_objective, evaluate_batch, normalize_advantages, ppo_update, Batch, PpoObjective, PpoSample, PpoStats,
};
pub use sampling::{argmin_first, difficulty_estimates, select_reference, ValueFunction};
pub use train::{build_env, evaluate, train, EvalPolicy, EvalReport, MetricsRow, TrainOutcome, METRICS_HEADER};
pub use trajectory::{collect_trajectory, compute_advantages, Horizon, Trajectory, Transition};
