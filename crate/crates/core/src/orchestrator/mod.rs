//! The round loop, experiment configuration, report files and the CLI.

mod cli;
mod config;
mod experiment;
mod round;

use std::path::PathBuf;

use thiserror::Error;

use crate::envelope::EnvelopeError;
use crate::learning::{IdxError, LearningError};
use crate::pqc::PqcError;
use crate::topology::TopologyError;

pub use cli::{cli, run_cli};
pub use config::{
    parse_policy, parse_strategy, AdversarySpec, AttackSimConfig, BenchmarkConfig, DatasetSource,
    ExperimentConfig, TrainingConfig,
};
pub use experiment::{
    output_dir, run_benchmark, run_experiment, ExperimentReport, BENCH_FILE, OUT_ENV, REPORT_FILE,
    ROUNDS_FILE,
};
pub use round::{global_digest, Device, Experiment, RoundLog, RoundState};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error(transparent)]
    Pqc(#[from] PqcError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("json output: {0}")]
    Json(#[from] serde_json::Error),
}
