use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::learning::{Schedule, DEFAULT_RHO};
use crate::pqc;
use crate::topology::{device_names, AdversaryStrategy, PolicyKind, SelectionPolicy};

/// Where training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic {
        n_samples: usize,
        classes: usize,
        dim: usize,
        class_separation: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            n_samples: 2000,
            classes: 10,
            dim: 20,
            class_separation: 3.0,
        }
    }
}

/// Local training settings shared by every device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub batch_size: usize,
    /// Passes over the local shard per round.
    pub local_epochs: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.5,
            schedule: Schedule::InvSqrt,
            batch_size: 8,
            local_epochs: 1,
        }
    }
}

/// What the adversary does each round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdversarySpec {
    #[default]
    None,
    /// Flip one bit in `k` envelopes after they are signed.
    Tamper { k: usize },
    /// Replace `k` envelopes with fabricated updates signed by a key the
    /// victims never owned.
    Forge { k: usize },
    /// Compromise the server if the guess matches the selected device.
    ServerAttack { strategy: AdversaryStrategy },
}

impl fmt::Display for AdversarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdversarySpec::None => f.write_str("none"),
            AdversarySpec::Tamper { k } => write!(f, "tamper:{k}"),
            AdversarySpec::Forge { k } => write!(f, "forge:{k}"),
            AdversarySpec::ServerAttack { strategy } => match strategy {
                AdversaryStrategy::GuessFixed(id) => write!(f, "server-attack:fixed={id}"),
                AdversaryStrategy::GuessUniform => f.write_str("server-attack:uniform"),
                AdversaryStrategy::GuessLastServer => f.write_str("server-attack:last"),
            },
        }
    }
}

/// `none`, `tamper:K`, `forge:K`, `server-attack:uniform`,
/// `server-attack:last` or `server-attack:fixed=ID`.
impl FromStr for AdversarySpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let count = |k: &str| {
            k.parse::<usize>()
                .map_err(|_| format!("bad count `{k}` in adversary `{s}`"))
        };
        match s.split_once(':') {
            None if s == "none" => Ok(AdversarySpec::None),
            Some(("tamper", k)) => Ok(AdversarySpec::Tamper { k: count(k)? }),
            Some(("forge", k)) => Ok(AdversarySpec::Forge { k: count(k)? }),
            Some(("server-attack", guess)) => Ok(AdversarySpec::ServerAttack {
                strategy: parse_strategy(guess)?,
            }),
            _ => Err(format!(
                "unknown adversary `{s}` (expected none, tamper:K, forge:K or server-attack:GUESS)"
            )),
        }
    }
}

/// `uniform`, `last` or `fixed=ID`.
pub fn parse_strategy(s: &str) -> Result<AdversaryStrategy, String> {
    match s.split_once('=') {
        Some(("fixed", id)) if !id.is_empty() => Ok(AdversaryStrategy::GuessFixed(id.into())),
        None if s == "uniform" => Ok(AdversaryStrategy::GuessUniform),
        None if s == "last" => Ok(AdversaryStrategy::GuessLastServer),
        _ => Err(format!(
            "unknown adversary guess `{s}` (expected uniform, last or fixed=ID)"
        )),
    }
}

/// `uniform`, `reputation` or `fixed=ID`.
pub fn parse_policy(s: &str) -> Result<SelectionPolicy, String> {
    match s.split_once('=') {
        Some(("fixed", id)) if !id.is_empty() => Ok(SelectionPolicy::fixed(id)),
        None if s == "uniform" => Ok(SelectionPolicy::uniform(0)),
        None if s == "reputation" => Ok(SelectionPolicy::reputation(0)),
        _ => Err(format!(
            "unknown policy `{s}` (expected uniform, reputation or fixed=ID)"
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub trials: usize,
    pub message_sizes: Vec<usize>,
    pub include_mock: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            trials: 30,
            message_sizes: vec![1024, 8192, 65536],
            include_mock: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSimConfig {
    pub trials: usize,
    pub strategy: AdversaryStrategy,
}

impl Default for AttackSimConfig {
    fn default() -> Self {
        AttackSimConfig {
            trials: 10_000,
            strategy: AdversaryStrategy::GuessUniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_devices: usize,
    pub rounds: usize,
    pub scheme_id: String,
    pub policy: SelectionPolicy,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSource,
    /// Label classes per device.
    pub partition_m: usize,
    /// Fraction of each class used for training; the rest is the test split.
    pub train_fraction: f64,
    /// L2 penalty of the logistic model.
    pub rho: f64,
    pub sgd: TrainingConfig,
    pub adversary: AdversarySpec,
    /// Simulated link speed for transfer time.
    pub bandwidth_bytes_per_sec: f64,
    pub benchmark: Option<BenchmarkConfig>,
    pub attack_sim: Option<AttackSimConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_devices: 10,
            rounds: 100,
            scheme_id: "dilithium2".into(),
            policy: SelectionPolicy::uniform(0),
            seed: 0,
            output_dir: PathBuf::from("out"),
            dataset: DatasetSource::default(),
            partition_m: 2,
            train_fraction: 0.8,
            rho: DEFAULT_RHO,
            sgd: TrainingConfig::default(),
            adversary: AdversarySpec::None,
            bandwidth_bytes_per_sec: 12.5e6,
            benchmark: None,
            attack_sim: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, OrchestratorError> {
        let text = std::fs::read_to_string(path).map_err(|source| OrchestratorError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| OrchestratorError::Config(format!("{}: {e}", path.display())))
    }

    pub fn device_ids(&self) -> Vec<String> {
        device_names(self.n_devices)
    }

    /// The selection policy with its RNG seed mixed with the experiment seed.
    pub fn effective_policy(&self) -> SelectionPolicy {
        SelectionPolicy {
            kind: self.policy.kind.clone(),
            rng_seed: self.policy.rng_seed ^ self.seed,
        }
    }

    /// Checks that do not need the dataset.
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |msg: String| Err(OrchestratorError::Config(msg));
        if self.n_devices < 2 {
            return bad(format!("need at least 2 devices, got {}", self.n_devices));
        }
        if self.rounds == 0 {
            return bad("need at least 1 round".into());
        }
        if pqc::lookup(&self.scheme_id).is_err() {
            return bad(format!("unknown scheme `{}`", self.scheme_id));
        }
        match &self.adversary {
            AdversarySpec::Tamper { k } | AdversarySpec::Forge { k } if *k > self.n_devices => {
                return bad(format!(
                    "adversary touches {k} envelopes but there are only {} devices",
                    self.n_devices
                ));
            }
            AdversarySpec::ServerAttack {
                strategy: AdversaryStrategy::GuessFixed(id),
            } if !self.device_ids().contains(id) => {
                return bad(format!("adversary guesses unknown device `{id}`"));
            }
            _ => {}
        }
        if let PolicyKind::Fixed(id) = &self.policy.kind {
            if !self.device_ids().contains(id) {
                return bad(format!(
                    "fixed server `{id}` is not one of d0..d{}",
                    self.n_devices - 1
                ));
            }
        }
        if self.partition_m == 0 {
            return bad("partition m must be at least 1".into());
        }
        if let DatasetSource::Synthetic { classes, .. } = self.dataset {
            if self.partition_m > classes {
                return bad(format!(
                    "partition m = {} exceeds {classes} classes",
                    self.partition_m
                ));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!(
                "train fraction {} outside (0, 1)",
                self.train_fraction
            ));
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return bad(format!("rho must be non-negative, got {}", self.rho));
        }
        if !(self.sgd.learning_rate.is_finite() && self.sgd.learning_rate > 0.0) {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.sgd.learning_rate
            ));
        }
        if self.sgd.batch_size == 0 || self.sgd.local_epochs == 0 {
            return bad("batch size and local epochs must be positive".into());
        }
        if !(self.bandwidth_bytes_per_sec.is_finite() && self.bandwidth_bytes_per_sec > 0.0) {
            return bad("bandwidth must be positive".into());
        }
        Ok(())
    }
}
