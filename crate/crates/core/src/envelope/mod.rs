//! Signed model updates: canonical encoding, signing, verification,
//! filtering and FedAvg.

mod aggregate;
mod codec;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pqc::{self, Keypair, PqcError, SchemeId};

pub use aggregate::{fed_avg, filter_updates, filter_updates_timed, FilterReport};
pub use codec::{
    canonical_decode, canonical_encode, CanonicalMessage, ParamVector, MAX_ID_LEN, PROTOCOL_VERSION,
};

#[derive(Debug, Error)]
pub enum EnvelopeError {
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("decoding error: {0}")]
    Decode(String),
    #[error("parameter {index} is not finite")]
    NonFinite { index: usize },
    #[error("parameter length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("nothing to aggregate: every update was rejected")]
    EmptyAggregate,
    #[error("signing with {scheme} failed: {source}")]
    Crypto {
        scheme: String,
        #[source]
        source: PqcError,
    },
}

/// Why the server refused an update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    BadSignature,
    Malformed,
    UnknownScheme,
    StaleRound,
    Duplicate,
}

impl RejectReason {
    pub const ALL: [RejectReason; 5] = [
        RejectReason::BadSignature,
        RejectReason::Malformed,
        RejectReason::UnknownScheme,
        RejectReason::StaleRound,
        RejectReason::Duplicate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::BadSignature => "bad_signature",
            RejectReason::Malformed => "malformed",
            RejectReason::UnknownScheme => "unknown_scheme",
            RejectReason::StaleRound => "stale_round",
            RejectReason::Duplicate => "duplicate",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    Rejected(RejectReason),
}

impl Verdict {
    pub fn is_accepted(self) -> bool {
        self == Verdict::Accepted
    }
}

/// `{signature, params, public key}` as sent from a device to the server,
/// plus the header fields that are bound into the signature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateEnvelope {
    #[serde(rename = "version")]
    pub protocol_version: u8,
    pub round: u64,
    pub device_id: String,
    pub scheme_id: String,
    pub params: ParamVector,
    #[serde(with = "b64")]
    pub public_key: Vec<u8>,
    #[serde(with = "b64")]
    pub signature: Vec<u8>,
}

impl UpdateEnvelope {
    /// The bytes the signature covers.
    pub fn signed_message(&self) -> Result<Vec<u8>, EnvelopeError> {
        canonical_encode(self.round, &self.device_id, &self.scheme_id, &self.params)
    }

    /// Rebuild an envelope from canonical bytes plus key and signature.
    pub fn from_canonical(
        message: &[u8],
        public_key: Vec<u8>,
        signature: Vec<u8>,
    ) -> Result<Self, EnvelopeError> {
        let m = canonical_decode(message)?;
        Ok(UpdateEnvelope {
            protocol_version: PROTOCOL_VERSION,
            round: m.round,
            device_id: m.device_id,
            scheme_id: m.scheme_id,
            params: m.params,
            public_key,
            signature,
        })
    }

    /// Size on the simulated wire: signed message, key and signature.
    pub fn wire_len(&self) -> usize {
        1 + 8
            + 1
            + self.device_id.len()
            + 1
            + self.scheme_id.len()
            + 4
            + 8 * self.params.len()
            + self.public_key.len()
            + self.signature.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("envelope serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}

/// Sign `params` for `round` as `device_id`.
pub fn sign_update(
    params: ParamVector,
    round: u64,
    device_id: &str,
    keypair: &Keypair,
) -> Result<UpdateEnvelope, EnvelopeError> {
    let scheme_id = keypair.scheme().as_str();
    let message = canonical_encode(round, device_id, scheme_id, &params)?;
    let signature = pqc::sign(keypair, &message).map_err(|source| EnvelopeError::Crypto {
        scheme: scheme_id.to_string(),
        source,
    })?;
    Ok(UpdateEnvelope {
        protocol_version: PROTOCOL_VERSION,
        round,
        device_id: device_id.to_string(),
        scheme_id: scheme_id.to_string(),
        params,
        public_key: keypair.public_key().to_vec(),
        signature,
    })
}

/// Check an envelope's signature over its own header and params.
///
/// Adversarial input never panics: unknown schemes, wrong key or signature
/// lengths and unencodable headers are all rejections.
pub fn verify_update(envelope: &UpdateEnvelope) -> Verdict {
    let Ok(scheme) = envelope.scheme_id.parse::<SchemeId>() else {
        return Verdict::Rejected(RejectReason::UnknownScheme);
    };
    let desc = scheme.descriptor();
    if envelope.protocol_version != PROTOCOL_VERSION
        || envelope.public_key.len() != desc.public_key_len
        || envelope.signature.is_empty()
        || envelope.signature.len() > desc.signature_len_max
    {
        return Verdict::Rejected(RejectReason::Malformed);
    }
    let Ok(message) = envelope.signed_message() else {
        return Verdict::Rejected(RejectReason::Malformed);
    };
    if pqc::verify(scheme, &envelope.public_key, &message, &envelope.signature) {
        Verdict::Accepted
    } else {
        Verdict::Rejected(RejectReason::BadSignature)
    }
}
