//! Signature scheme registry and backends.
//!
//! Three post-quantum schemes are provided through the PQClean-derived
//! `pqcrypto-*` crates (Dilithium2, Falcon-512, SPHINCS+-SHA2-128f-simple),
//! plus a keyed-hash `mock` scheme that is deterministic under a seed and
//! offers no security at all. The mock exists so property tests can run at
//! volume; it is flagged `post_quantum = false` and skipped by benchmarks
//! unless asked for explicitly.

mod backend;
mod timing;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{keygen, sign, verify, Keypair};
pub use timing::{timing_probe, write_timing_csv, DurationSummary, TimingReport};

#[derive(Debug, Error)]
pub enum PqcError {
    #[error("unknown signature scheme `{0}`")]
    UnknownScheme(String),
    #[error("{scheme}: backend failure: {message}")]
    Backend { scheme: String, message: String },
    #[error("timing probe needs at least one trial")]
    NoTrials,
    #[error("timing report output: {0}")]
    Csv(#[from] csv::Error),
}

/// Registered signature schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeId {
    Dilithium2,
    Falcon512,
    SphincsSha2_128f,
    Mock,
}

impl SchemeId {
    pub const ALL: [SchemeId; 4] = [
        SchemeId::Dilithium2,
        SchemeId::Falcon512,
        SchemeId::SphincsSha2_128f,
        SchemeId::Mock,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeId::Dilithium2 => "dilithium2",
            SchemeId::Falcon512 => "falcon512",
            SchemeId::SphincsSha2_128f => "sphincsplus-sha2-128f",
            SchemeId::Mock => "mock",
        }
    }

    pub fn descriptor(self) -> &'static SchemeDescriptor {
        registry()
            .iter()
            .find(|d| d.id == self)
            .expect("every SchemeId has a registry entry")
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeId {
    type Err = PqcError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| PqcError::UnknownScheme(s.to_string()))
    }
}

impl Serialize for SchemeId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for SchemeId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Static facts about a scheme. `security_level` is the claimed NIST
/// category; the mock claims none and reports 0.
#[derive(Debug, Clone, Serialize)]
pub struct SchemeDescriptor {
    #[serde(rename = "scheme_id")]
    pub id: SchemeId,
    pub security_level: u8,
    pub public_key_len: usize,
    pub signature_len_max: usize,
    pub post_quantum: bool,
}

impl SchemeDescriptor {
    pub fn scheme_id(&self) -> &'static str {
        self.id.as_str()
    }
}

/// All registered schemes in a stable order (real schemes first, mock last).
pub fn registry() -> &'static [SchemeDescriptor] {
    static REGISTRY: OnceLock<Vec<SchemeDescriptor>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        SchemeId::ALL
            .into_iter()
            .map(|id| {
                let (public_key_len, signature_len_max) = backend::lengths(id);
                let (security_level, post_quantum) = match id {
                    SchemeId::Dilithium2 => (2, true),
                    SchemeId::Falcon512 => (1, true),
                    SchemeId::SphincsSha2_128f => (1, true),
                    SchemeId::Mock => (0, false),
                };
                SchemeDescriptor {
                    id,
                    security_level,
                    public_key_len,
                    signature_len_max,
                    post_quantum,
                }
            })
            .collect()
    })
}

/// Look up a descriptor by its string id.
pub fn lookup(scheme_id: &str) -> Result<&'static SchemeDescriptor, PqcError> {
    let id: SchemeId = scheme_id.parse()?;
    Ok(id.descriptor())
}

/// The post-quantum schemes, i.e. everything except the mock.
pub fn real_schemes() -> impl Iterator<Item = &'static SchemeDescriptor> {
    registry().iter().filter(|d| d.post_quantum)
}
