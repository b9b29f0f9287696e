use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AdversarySpec, DatasetSource, ExperimentConfig, OrchestratorError};
use crate::envelope::{
    canonical_encode, fed_avg, filter_updates_timed, sign_update, EnvelopeError, ParamVector,
    RejectReason, UpdateEnvelope,
};
use crate::learning::{
    cycle_m_partition, load_idx, local_update, make_synthetic, Dataset, LogisticModel,
    PartitionSpec, SgdConfig,
};
use crate::pqc::{keygen, Keypair};
use crate::topology::{adversary_target, select_server, update_reputation, ReputationTable};

const TRAIN_STREAM: u64 = 1;
const ADVERSARY_STREAM: u64 = 2;
const SPLIT_STREAM: u64 = 3;
const KEY_STREAM: u64 = 4;

/// splitmix64 finalizer over `(seed, stream, index)`.
pub(crate) fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// SHA-256 of the canonical encoding of a global model, hex encoded.
pub fn global_digest(params: &ParamVector) -> String {
    let bytes = canonical_encode(0, "global", "fedavg", params).expect("fixed short ids");
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// One row of `rounds.csv`. The last seven columns are wall-clock and
/// differ between otherwise identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: u64,
    pub server_id: String,
    pub accepted: usize,
    pub rejected: usize,
    pub rej_bad_signature: usize,
    pub rej_malformed: usize,
    pub rej_unknown_scheme: usize,
    pub rej_stale_round: usize,
    pub rej_duplicate: usize,
    /// No update was aggregated; the previous global model was kept.
    pub degenerate: bool,
    pub server_compromised: bool,
    pub upload_bytes: usize,
    pub global_digest: String,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub train_ns: u64,
    pub sign_ns: u64,
    pub transfer_ns: u64,
    pub verify_ns: u64,
    pub aggregate_ns: u64,
    pub round_ns: u64,
    /// `(sign + verify) / (train + sign + transfer + verify + aggregate)`
    pub overhead_fraction: f64,
}

impl RoundLog {
    pub const WALL_TIME_COLUMNS: usize = 7;
}

pub struct Device {
    pub id: String,
    pub keypair: Keypair,
    /// Indices into the training split.
    pub shard: Vec<usize>,
}

/// Everything fixed for the length of an experiment.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: LogisticModel,
    pub train: Dataset,
    pub test: Dataset,
    pub partition: PartitionSpec,
    pub devices: Vec<Device>,
    adversary_key: Keypair,
}

/// What changes from round to round.
#[derive(Debug, Clone)]
pub struct RoundState {
    pub global: ParamVector,
    pub reputation: ReputationTable,
    pub previous_server: Option<String>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, OrchestratorError> {
        config.validate()?;
        let full = load_dataset(&config)?;
        if config.partition_m > full.n_classes() {
            return Err(OrchestratorError::Config(format!(
                "partition m = {} exceeds {} classes",
                config.partition_m,
                full.n_classes()
            )));
        }
        let (train, test) = full.split(
            config.train_fraction,
            derive_seed(config.seed, SPLIT_STREAM, 0),
        )?;
        let partition = cycle_m_partition(&train, config.n_devices, config.partition_m)?;
        let model = LogisticModel::for_dataset(&train, config.rho);

        let key_seed = |i: u64| Some(derive_seed(config.seed, KEY_STREAM, i));
        let devices = config
            .device_ids()
            .into_iter()
            .zip(partition.assignment.iter().cloned())
            .enumerate()
            .map(|(i, (id, shard))| {
                Ok(Device {
                    id,
                    keypair: keygen(&config.scheme_id, key_seed(i as u64))?,
                    shard,
                })
            })
            .collect::<Result<Vec<_>, OrchestratorError>>()?;
        let adversary_key = keygen(&config.scheme_id, key_seed(u64::MAX))?;

        Ok(Experiment {
            config,
            model,
            train,
            test,
            partition,
            devices,
            adversary_key,
        })
    }

    pub fn device_ids(&self) -> Vec<String> {
        self.devices.iter().map(|d| d.id.clone()).collect()
    }

    pub fn initial_state(&self) -> RoundState {
        RoundState {
            global: self.model.zeros(),
            reputation: ReputationTable::new(self.device_ids()),
            previous_server: None,
        }
    }

    /// Local SGD steps per device per round.
    pub fn local_steps(&self, device: &Device) -> usize {
        device.shard.len().div_ceil(self.config.sgd.batch_size) * self.config.sgd.local_epochs
    }

    /// One pass of the protocol. Rounds are numbered from 1.
    pub fn run_round(
        &self,
        state: &RoundState,
        round: u64,
    ) -> Result<(RoundState, RoundLog), OrchestratorError> {
        let started = Instant::now();
        let cfg = &self.config;
        let ids = self.device_ids();
        let policy = cfg.effective_policy();
        let server = select_server(round, &ids, &policy, Some(&state.reputation))?;

        // Device phase: every device, the server included, trains and signs.
        let produced: Vec<(UpdateEnvelope, u64, u64)> = self
            .devices
            .par_iter()
            .enumerate()
            .map(|(i, device)| self.device_task(device, i as u64, &state.global, round))
            .collect::<Result<_, _>>()?;
        let train_ns = produced.iter().map(|p| p.1).sum();
        let sign_ns = produced.iter().map(|p| p.2).sum();
        let mut envelopes: Vec<UpdateEnvelope> = produced.into_iter().map(|p| p.0).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, ADVERSARY_STREAM, round));
        let mut compromised = false;
        match &cfg.adversary {
            AdversarySpec::None => {}
            AdversarySpec::Tamper { k } => {
                for victim in index::sample(&mut rng, envelopes.len(), *k) {
                    flip_mantissa_bit(&mut envelopes[victim], &mut rng);
                }
            }
            AdversarySpec::Forge { k } => {
                for victim in index::sample(&mut rng, envelopes.len(), *k) {
                    envelopes[victim] = self.forge(&envelopes[victim], &mut rng)?;
                }
            }
            AdversarySpec::ServerAttack { strategy } => {
                let target = adversary_target(
                    strategy,
                    round,
                    &ids,
                    state.previous_server.as_deref(),
                    derive_seed(cfg.seed, ADVERSARY_STREAM, u64::MAX),
                );
                compromised = target == server;
            }
        }
        let upload_bytes: usize = envelopes.iter().map(UpdateEnvelope::wire_len).sum();

        // Server phase.
        let (report, verify_times) = filter_updates_timed(&envelopes, round);
        let verify_ns = verify_times.iter().sum();
        let aggregate_start = Instant::now();
        let aggregated = if compromised {
            None
        } else {
            match fed_avg(&report.accepted_params) {
                Ok(p) => Some(p),
                Err(EnvelopeError::EmptyAggregate) => None,
                Err(e) => return Err(e.into()),
            }
        };
        let aggregate_ns = elapsed_ns(aggregate_start);
        let degenerate = aggregated.is_none();
        let global = aggregated.unwrap_or_else(|| state.global.clone());
        let reputation = update_reputation(&state.reputation, &report)?;

        let broadcast_bytes =
            canonical_encode(round, &server, "fedavg", &global)?.len() * (ids.len() - 1);
        let transfer_ns = ((upload_bytes + broadcast_bytes) as f64 * 1e9
            / cfg.bandwidth_bytes_per_sec)
            .round() as u64;

        let train_eval = self.model.evaluate(&global, &self.train)?;
        let test_eval = self.model.evaluate(&global, &self.test)?;
        let counts = report.reason_counts();
        let count = |r: RejectReason| counts.get(&r).copied().unwrap_or(0);
        let total_ns = train_ns + sign_ns + transfer_ns + verify_ns + aggregate_ns;
        let log = RoundLog {
            round,
            server_id: server.clone(),
            accepted: report.accepted.len(),
            rejected: report.rejected.len(),
            rej_bad_signature: count(RejectReason::BadSignature),
            rej_malformed: count(RejectReason::Malformed),
            rej_unknown_scheme: count(RejectReason::UnknownScheme),
            rej_stale_round: count(RejectReason::StaleRound),
            rej_duplicate: count(RejectReason::Duplicate),
            degenerate,
            server_compromised: compromised,
            upload_bytes,
            global_digest: global_digest(&global),
            train_loss: train_eval.loss,
            train_accuracy: train_eval.accuracy,
            test_loss: test_eval.loss,
            test_accuracy: test_eval.accuracy,
            train_ns,
            sign_ns,
            transfer_ns,
            verify_ns,
            aggregate_ns,
            round_ns: elapsed_ns(started),
            overhead_fraction: if total_ns == 0 {
                0.0
            } else {
                (sign_ns + verify_ns) as f64 / total_ns as f64
            },
        };
        let next = RoundState {
            global,
            reputation,
            previous_server: Some(server),
        };
        Ok((next, log))
    }

    /// Train on the local shard from the global params and sign the result.
    /// Returns the envelope with train and sign times.
    fn device_task(
        &self,
        device: &Device,
        index: u64,
        global: &ParamVector,
        round: u64,
    ) -> Result<(UpdateEnvelope, u64, u64), OrchestratorError> {
        let start = Instant::now();
        let params = if device.shard.is_empty() {
            global.clone()
        } else {
            let steps = self.local_steps(device);
            let sgd = SgdConfig {
                steps,
                learning_rate: self.config.sgd.learning_rate,
                schedule: self.config.sgd.schedule,
                batch_size: self.config.sgd.batch_size,
                seed: derive_seed(self.config.seed ^ index, TRAIN_STREAM, round),
                step_offset: steps * (round.saturating_sub(1) as usize),
            };
            local_update(global, &self.model, self.train.view(&device.shard), &sgd)?.params
        };
        let train_ns = elapsed_ns(start);

        let start = Instant::now();
        let envelope = sign_update(params, round, &device.id, &device.keypair)?;
        Ok((envelope, train_ns, elapsed_ns(start)))
    }

    /// A fabricated update claiming to come from `victim`'s device. It is
    /// signed with the adversary's own key but carries the victim's public
    /// key, as the adversary cannot produce the victim's signature.
    fn forge(
        &self,
        victim: &UpdateEnvelope,
        rng: &mut ChaCha8Rng,
    ) -> Result<UpdateEnvelope, OrchestratorError> {
        let fake: Vec<f64> = (0..victim.params.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let mut forged = sign_update(
            ParamVector::new(fake)?,
            victim.round,
            &victim.device_id,
            &self.adversary_key,
        )?;
        forged.public_key = victim.public_key.clone();
        Ok(forged)
    }
}

/// Flip one of the 52 mantissa bits of a random parameter; the value stays
/// finite and the signed bytes change by exactly one bit.
fn flip_mantissa_bit(envelope: &mut UpdateEnvelope, rng: &mut ChaCha8Rng) {
    let j = rng.random_range(0..envelope.params.len());
    let bit = rng.random_range(0..52);
    let v = envelope.params.as_slice()[j];
    envelope
        .params
        .set(j, f64::from_bits(v.to_bits() ^ (1u64 << bit)))
        .expect("mantissa flip keeps the value finite");
}

fn load_dataset(config: &ExperimentConfig) -> Result<Dataset, OrchestratorError> {
    match &config.dataset {
        DatasetSource::Synthetic {
            n_samples,
            classes,
            dim,
            class_separation,
        } => Ok(make_synthetic(
            config.seed,
            *n_samples,
            *classes,
            *dim,
            *class_separation,
        )?),
        DatasetSource::Idx { images, labels } => Ok(load_idx(images, labels)?),
    }
}

pub(crate) fn elapsed_ns(start: Instant) -> u64 {
    (start.elapsed().as_nanos() as u64).max(1)
}
