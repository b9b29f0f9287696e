//! Per-round server selection and the adversary harness.
//!
//! The adversary commits to a target device before the round's server is
//! revealed. Under a fixed server it hits every time; under uniform random
//! selection its hit rate is `1/n` whatever strategy it uses.

use std::collections::BTreeMap;
use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envelope::FilterReport;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("device list is empty")]
    NoDevices,
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "device_id")]
pub enum PolicyKind {
    Fixed(String),
    UniformRandom,
    ReputationWeighted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    #[serde(flatten)]
    pub kind: PolicyKind,
    #[serde(default)]
    pub rng_seed: u64,
}

impl SelectionPolicy {
    pub fn fixed(device_id: impl Into<String>) -> Self {
        SelectionPolicy {
            kind: PolicyKind::Fixed(device_id.into()),
            rng_seed: 0,
        }
    }

    pub fn uniform(seed: u64) -> Self {
        SelectionPolicy {
            kind: PolicyKind::UniformRandom,
            rng_seed: seed,
        }
    }

    pub fn reputation(seed: u64) -> Self {
        SelectionPolicy {
            kind: PolicyKind::ReputationWeighted,
            rng_seed: seed,
        }
    }
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            PolicyKind::Fixed(id) => write!(f, "fixed({id})"),
            PolicyKind::UniformRandom => f.write_str("uniform_random"),
            PolicyKind::ReputationWeighted => f.write_str("reputation_weighted"),
        }
    }
}

/// Stream ids keep the selection draw independent of adversary draws that
/// share the same seed.
const SELECTION_STREAM: u64 = 0x005E_1EC7;
const ADVERSARY_STREAM: u64 = 0xADD0_5A27;

/// RNG for `(seed, round)` only, regardless of what else has been drawn.
fn round_rng(seed: u64, round: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream.rotate_left(32));
    rng.set_stream(round);
    rng
}

/// Per-device server reputation. Scores start at 1.0 and stay positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReputationTable {
    scores: BTreeMap<String, f64>,
}

pub const REPUTATION_FLOOR: f64 = 0.01;

impl ReputationTable {
    pub fn new<I, S>(devices: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ReputationTable {
            scores: devices.into_iter().map(|d| (d.into(), 1.0)).collect(),
        }
    }

    pub fn score(&self, device: &str) -> Option<f64> {
        self.scores.get(device).copied()
    }

    pub fn scores(&self) -> &BTreeMap<String, f64> {
        &self.scores
    }
}

/// Reward accepted devices (+1) and halve rejected ones, floored at 0.01.
pub fn update_reputation(
    table: &ReputationTable,
    report: &FilterReport,
) -> Result<ReputationTable, TopologyError> {
    let mut next = table.clone();
    for id in &report.accepted {
        let s = next
            .scores
            .get_mut(id)
            .ok_or_else(|| TopologyError::UnknownDevice(id.clone()))?;
        *s += 1.0;
    }
    for (id, _) in &report.rejected {
        let s = next
            .scores
            .get_mut(id)
            .ok_or_else(|| TopologyError::UnknownDevice(id.clone()))?;
        *s = (*s * 0.5).max(REPUTATION_FLOOR);
    }
    Ok(next)
}

/// Pick this round's server.
///
/// Random policies draw from an RNG keyed by `(policy seed, round)`, so the
/// same inputs always select the same device. A missing reputation table
/// makes `reputation_weighted` uniform.
pub fn select_server(
    round: u64,
    devices: &[String],
    policy: &SelectionPolicy,
    reputation: Option<&ReputationTable>,
) -> Result<String, TopologyError> {
    if devices.is_empty() {
        return Err(TopologyError::NoDevices);
    }
    let mut rng = round_rng(policy.rng_seed, round, SELECTION_STREAM);
    match &policy.kind {
        PolicyKind::Fixed(id) => {
            if devices.contains(id) {
                Ok(id.clone())
            } else {
                Err(TopologyError::UnknownDevice(id.clone()))
            }
        }
        PolicyKind::UniformRandom => Ok(devices[rng.random_range(0..devices.len())].clone()),
        PolicyKind::ReputationWeighted => {
            let weights: Vec<f64> = match reputation {
                Some(table) => devices
                    .iter()
                    .map(|d| {
                        table
                            .score(d)
                            .ok_or_else(|| TopologyError::UnknownDevice(d.clone()))
                    })
                    .collect::<Result<_, _>>()?,
                None => vec![1.0; devices.len()],
            };
            let dist =
                WeightedIndex::new(&weights).expect("reputation scores are positive and finite");
            Ok(devices[dist.sample(&mut rng)].clone())
        }
    }
}

/// How the adversary picks its target before the server is revealed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "strategy", content = "target")]
pub enum AdversaryStrategy {
    GuessFixed(String),
    GuessUniform,
    /// Attack whoever served last round (round 0 falls back to the first device).
    GuessLastServer,
}

impl fmt::Display for AdversaryStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdversaryStrategy::GuessFixed(id) => write!(f, "guess_fixed({id})"),
            AdversaryStrategy::GuessUniform => f.write_str("guess_uniform"),
            AdversaryStrategy::GuessLastServer => f.write_str("guess_last_server"),
        }
    }
}

/// The adversary's target for `round`. `previous_server` is what served in
/// `round - 1`, if anything.
pub fn adversary_target(
    strategy: &AdversaryStrategy,
    round: u64,
    devices: &[String],
    previous_server: Option<&str>,
    seed: u64,
) -> String {
    match strategy {
        AdversaryStrategy::GuessFixed(id) => id.clone(),
        AdversaryStrategy::GuessUniform => {
            let mut rng = round_rng(seed, round, ADVERSARY_STREAM);
            devices[rng.random_range(0..devices.len())].clone()
        }
        AdversaryStrategy::GuessLastServer => previous_server
            .map(str::to_string)
            .unwrap_or_else(|| devices[0].clone()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackOutcome {
    pub policy: String,
    pub adversary: String,
    pub n: usize,
    pub trials: usize,
    pub hits: usize,
    pub hit_rate: f64,
}

impl AttackOutcome {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("attack outcome serializes")
    }
}

/// Device names used by the simulators: `d0 .. d{n-1}`.
pub fn device_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("d{i}")).collect()
}

/// Monte Carlo estimate of `P(adversary attacks the actual server)`.
///
/// Trial `t` is round `t`. Reputation weighting runs against a fresh table
/// (all scores 1.0), since no updates are exchanged here.
pub fn simulate_attack(
    policy: &SelectionPolicy,
    n_devices: usize,
    adversary: &AdversaryStrategy,
    trials: usize,
) -> Result<AttackOutcome, TopologyError> {
    let devices = device_names(n_devices);
    if devices.is_empty() {
        return Err(TopologyError::NoDevices);
    }
    let table = ReputationTable::new(devices.iter().cloned());
    let select = |round: u64| select_server(round, &devices, policy, Some(&table));
    // Surface a bad fixed id before fanning out.
    select(0)?;

    let hits = (0..trials as u64)
        .into_par_iter()
        .map(|round| {
            let previous = match round {
                0 => None,
                r => Some(select(r - 1).expect("validated above")),
            };
            let target = adversary_target(
                adversary,
                round,
                &devices,
                previous.as_deref(),
                policy.rng_seed,
            );
            usize::from(select(round).expect("validated above") == target)
        })
        .sum::<usize>();

    Ok(AttackOutcome {
        policy: policy.to_string(),
        adversary: adversary.to_string(),
        n: n_devices,
        trials,
        hits,
        hit_rate: if trials == 0 {
            0.0
        } else {
            hits as f64 / trials as f64
        },
    })
}

/// Exact hit probability for the policies with a closed form. Reputation
/// weighting depends on the table and has none.
pub fn analytic_hit_probability(
    policy: &SelectionPolicy,
    n_devices: usize,
    adversary: &AdversaryStrategy,
) -> Option<f64> {
    match (&policy.kind, adversary) {
        (PolicyKind::Fixed(server), AdversaryStrategy::GuessFixed(target)) => {
            Some(if server == target { 1.0 } else { 0.0 })
        }
        // The fixed server is also the last server from round 1 on.
        (PolicyKind::Fixed(_), AdversaryStrategy::GuessLastServer) => None,
        (PolicyKind::Fixed(_), AdversaryStrategy::GuessUniform) => Some(1.0 / n_devices as f64),
        (PolicyKind::UniformRandom, _) => Some(1.0 / n_devices as f64),
        (PolicyKind::ReputationWeighted, _) => None,
    }
}
