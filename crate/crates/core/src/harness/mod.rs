//! Experiment plumbing: trajectory-level splits, training-pair assembly,
//! the Adam training loop with best-validation retention, autoregressive
//! rollout, transfer learning and the description ablation sweep.
//!
//! Everything runs on the calling thread. Seed-level parallelism belongs to
//! the caller, which can fan [`run_seed`] out and fold the outcomes with
//! [`MetricsReport::aggregate`].

mod config;
mod data;
mod experiment;
mod metrics;
mod rollout;
mod split;
mod train;

pub use config::{ExperimentConfig, Task, TextSpec, TransferSpec};
pub use data::{build_pairs, Corpus, Dataset, Pair, TextBank};
pub use experiment::{ablate, assess, run_experiment, run_seed, run_transfer_seed, transfer, SeedOutcome};
pub use metrics::{MetricRow, MetricsReport, RolloutRow, Stat};
pub use rollout::{rollout, rollout_model, NextFrame, RolloutCurve};
pub use split::{split_counts, split_dataset, Split};
pub use train::{evaluate, train, EpochRecord, TrainOptions, TrainOutcome};
