//! Datasets, the cycle-m partitioner, the reference learner and its
//! convergence analysis.
//!
//! The reference learner is L2-regularized multinomial logistic regression:
//! convex and smooth, so SGD on it has the textbook `O(1/sqrt(T))` guarantee.
//! Other models can plug in through [`Objective`].

mod convergence;
mod dataset;
pub mod idx;
mod model;
mod partition;
mod sgd;

use thiserror::Error;

pub use convergence::{
    analyze_convergence, distance_bound, estimate_smoothness, fit_convergence, reference_optimum,
    ConvergenceReport, MIN_TRACE_LEN,
};
pub use dataset::{make_synthetic, Dataset, Shard};
pub use idx::{load_idx, IdxError};
pub use model::{Evaluation, LogisticModel, Objective, Quadratic, ShardObjective, DEFAULT_RHO};
pub use partition::{cycle_m_partition, PartitionSpec};
pub use sgd::{local_sgd, local_update, sgd, Schedule, SgdConfig, SgdOutcome};

#[derive(Debug, Error)]
pub enum LearningError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("convergence fit: {0}")]
    Fit(String),
    #[error("csv export: {0}")]
    Csv(#[from] csv::Error),
}
