#![allow(dead_code)]

use pqfl::envelope::{sign_update, verify_update, ParamVector, UpdateEnvelope};
use pqfl::pqc::Keypair;
use rand::Rng;

/// A signed update with random round, id and params.
pub fn random_envelope<R: Rng>(rng: &mut R, keypair: &Keypair) -> UpdateEnvelope {
    let len = rng.random_range(1..40);
    let params: Vec<f64> = (0..len).map(|_| rng.random_range(-50.0..50.0)).collect();
    let round = rng.random_range(0..1_000_000);
    let id = format!("dev-{}", rng.random_range(0..10_000u32));
    sign_update(ParamVector::new(params).unwrap(), round, &id, keypair).unwrap()
}

/// Bits on the wire: signed message, then public key, then signature.
pub fn wire_bits(envelope: &UpdateEnvelope) -> usize {
    8 * envelope.wire_len()
}

/// Flip wire bit `bit` and report whether the server still accepts.
///
/// Flips inside the signed message go through the canonical decoder, as a
/// receiver would parse them; a message that no longer decodes counts as
/// rejected.
pub fn accepted_after_flip(envelope: &UpdateEnvelope, bit: usize) -> bool {
    let mut message = envelope.signed_message().unwrap();
    let mut public_key = envelope.public_key.clone();
    let mut signature = envelope.signature.clone();
    let (byte, mask) = (bit / 8, 1u8 << (bit % 8));
    let (m, k) = (message.len(), public_key.len());
    if byte < m {
        message[byte] ^= mask;
    } else if byte < m + k {
        public_key[byte - m] ^= mask;
    } else {
        signature[byte - m - k] ^= mask;
    }
    match UpdateEnvelope::from_canonical(&message, public_key, signature) {
        Ok(tampered) => verify_update(&tampered).is_accepted(),
        Err(_) => false,
    }
}
