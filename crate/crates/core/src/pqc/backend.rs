use std::fmt;

use pqcrypto_dilithium::dilithium2;
use pqcrypto_falcon::falcon512;
use pqcrypto_sphincsplus::sphincssha2128fsimple as sphincs;
use pqcrypto_traits::sign::{DetachedSignature as _, PublicKey as _};
use rand::RngCore;
use sha2::{Digest, Sha256};

use super::{PqcError, SchemeId};

const MOCK_KEY_LEN: usize = 32;
const MOCK_KEY_DOMAIN: &[u8] = b"pqfl/mock/keygen/v1";
const MOCK_SIG_DOMAIN: &[u8] = b"pqfl/mock/sign/v1";

pub(super) fn lengths(id: SchemeId) -> (usize, usize) {
    match id {
        SchemeId::Dilithium2 => (
            dilithium2::public_key_bytes(),
            dilithium2::signature_bytes(),
        ),
        SchemeId::Falcon512 => (falcon512::public_key_bytes(), falcon512::signature_bytes()),
        SchemeId::SphincsSha2_128f => (sphincs::public_key_bytes(), sphincs::signature_bytes()),
        SchemeId::Mock => (MOCK_KEY_LEN, 32),
    }
}

#[derive(Clone)]
enum SecretKey {
    Dilithium2(Box<dilithium2::SecretKey>),
    Falcon512(Box<falcon512::SecretKey>),
    Sphincs(sphincs::SecretKey),
    Mock([u8; MOCK_KEY_LEN]),
}

/// A scheme keypair. The public key is readable; the secret key is only
/// reachable through [`sign`].
#[derive(Clone)]
pub struct Keypair {
    scheme: SchemeId,
    public_key: Vec<u8>,
    secret: SecretKey,
}

impl Keypair {
    pub fn scheme(&self) -> SchemeId {
        self.scheme
    }

    pub fn public_key(&self) -> &[u8] {
        &self.public_key
    }
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keypair")
            .field("scheme", &self.scheme)
            .field("public_key_len", &self.public_key.len())
            .finish_non_exhaustive()
    }
}

/// Generate a keypair for `scheme_id`.
///
/// The seed only affects the mock scheme; the real backends draw from the
/// operating system RNG and cannot be seeded.
pub fn keygen(scheme_id: &str, seed: Option<u64>) -> Result<Keypair, PqcError> {
    let scheme: SchemeId = scheme_id.parse()?;
    Ok(keygen_for(scheme, seed))
}

pub(crate) fn keygen_for(scheme: SchemeId, seed: Option<u64>) -> Keypair {
    let (public_key, secret) = match scheme {
        SchemeId::Dilithium2 => {
            let (pk, sk) = dilithium2::keypair();
            (pk.as_bytes().to_vec(), SecretKey::Dilithium2(Box::new(sk)))
        }
        SchemeId::Falcon512 => {
            let (pk, sk) = falcon512::keypair();
            (pk.as_bytes().to_vec(), SecretKey::Falcon512(Box::new(sk)))
        }
        SchemeId::SphincsSha2_128f => {
            let (pk, sk) = sphincs::keypair();
            (pk.as_bytes().to_vec(), SecretKey::Sphincs(sk))
        }
        SchemeId::Mock => {
            let key = match seed {
                Some(seed) => {
                    let mut h = Sha256::new();
                    h.update(MOCK_KEY_DOMAIN);
                    h.update(seed.to_le_bytes());
                    h.finalize().into()
                }
                None => {
                    let mut key = [0u8; MOCK_KEY_LEN];
                    rand::rng().fill_bytes(&mut key);
                    key
                }
            };
            // The mock verifies by recomputing the keyed hash, so its
            // "public" key is the key itself.
            (key.to_vec(), SecretKey::Mock(key))
        }
    };
    Keypair {
        scheme,
        public_key,
        secret,
    }
}

fn mock_tag(key: &[u8], message: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(MOCK_SIG_DOMAIN);
    h.update(key);
    h.update(message);
    h.finalize().into()
}

/// Produce a detached signature over `message`.
pub fn sign(keypair: &Keypair, message: &[u8]) -> Result<Vec<u8>, PqcError> {
    let sig = match &keypair.secret {
        SecretKey::Dilithium2(sk) => dilithium2::detached_sign(message, sk).as_bytes().to_vec(),
        SecretKey::Falcon512(sk) => falcon512::detached_sign(message, sk).as_bytes().to_vec(),
        SecretKey::Sphincs(sk) => sphincs::detached_sign(message, sk).as_bytes().to_vec(),
        SecretKey::Mock(key) => mock_tag(key, message).to_vec(),
    };
    if sig.is_empty() {
        return Err(PqcError::Backend {
            scheme: keypair.scheme.to_string(),
            message: "empty signature".into(),
        });
    }
    Ok(sig)
}

/// Check a detached signature. Garbage of any length yields `false`.
pub fn verify(scheme: SchemeId, public_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
    match scheme {
        SchemeId::Dilithium2 => {
            let (Ok(pk), Ok(sig)) = (
                dilithium2::PublicKey::from_bytes(public_key),
                dilithium2::DetachedSignature::from_bytes(signature),
            ) else {
                return false;
            };
            dilithium2::verify_detached_signature(&sig, message, &pk).is_ok()
        }
        SchemeId::Falcon512 => {
            let (Ok(pk), Ok(sig)) = (
                falcon512::PublicKey::from_bytes(public_key),
                falcon512::DetachedSignature::from_bytes(signature),
            ) else {
                return false;
            };
            falcon512::verify_detached_signature(&sig, message, &pk).is_ok()
        }
        SchemeId::SphincsSha2_128f => {
            let (Ok(pk), Ok(sig)) = (
                sphincs::PublicKey::from_bytes(public_key),
                sphincs::DetachedSignature::from_bytes(signature),
            ) else {
                return false;
            };
            sphincs::verify_detached_signature(&sig, message, &pk).is_ok()
        }
        SchemeId::Mock => {
            if public_key.len() != MOCK_KEY_LEN || signature.len() != 32 {
                return false;
            }
            let expected = mock_tag(public_key, message);
            // Non-short-circuiting compare.
            expected
                .iter()
                .zip(signature)
                .fold(0u8, |acc, (a, b)| acc | (a ^ b))
                == 0
        }
    }
}
