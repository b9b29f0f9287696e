//! Canonical byte layout of a signed update.
//!
//! ```text
//! 0x01 | round: u64 LE | len: u8 | device_id | len: u8 | scheme_id | count: u32 LE | params: f64 LE * count
//! ```
//!
//! The layout is length-prefixed throughout, so it is injective on
//! `(round, device_id, scheme_id, params)`.

use serde::{Deserialize, Serialize};

use super::EnvelopeError;

pub const PROTOCOL_VERSION: u8 = 0x01;
pub const MAX_ID_LEN: usize = u8::MAX as usize;

/// A model parameter vector. Every element is finite.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EnvelopeError> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(EnvelopeError::NonFinite { index });
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Replace one element, keeping the finiteness invariant.
    pub fn set(&mut self, index: usize, value: f64) -> Result<(), EnvelopeError> {
        if !value.is_finite() {
            return Err(EnvelopeError::NonFinite { index });
        }
        let len = self.0.len();
        let slot = self.0.get_mut(index).ok_or(EnvelopeError::LengthMismatch {
            expected: index + 1,
            found: len,
        })?;
        *slot = value;
        Ok(())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = EnvelopeError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        ParamVector::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0
    }
}

fn check_id(field: &'static str, id: &str) -> Result<u8, EnvelopeError> {
    if id.is_empty() || id.len() > MAX_ID_LEN {
        return Err(EnvelopeError::Encoding(format!(
            "{field} must be 1..={MAX_ID_LEN} bytes, got {}",
            id.len()
        )));
    }
    Ok(id.len() as u8)
}

/// Serialize the signed portion of an update.
pub fn canonical_encode(
    round: u64,
    device_id: &str,
    scheme_id: &str,
    params: &ParamVector,
) -> Result<Vec<u8>, EnvelopeError> {
    let device_len = check_id("device_id", device_id)?;
    let scheme_len = check_id("scheme_id", scheme_id)?;
    let count = u32::try_from(params.len())
        .map_err(|_| EnvelopeError::Encoding(format!("{} params exceed u32", params.len())))?;

    let mut out = Vec::with_capacity(
        1 + 8 + 1 + device_id.len() + 1 + scheme_id.len() + 4 + 8 * params.len(),
    );
    out.push(PROTOCOL_VERSION);
    out.extend_from_slice(&round.to_le_bytes());
    out.push(device_len);
    out.extend_from_slice(device_id.as_bytes());
    out.push(scheme_len);
    out.extend_from_slice(scheme_id.as_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Fields recovered from a canonical message.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalMessage {
    pub round: u64,
    pub device_id: String,
    pub scheme_id: String,
    pub params: ParamVector,
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EnvelopeError> {
        if self.bytes.len() < n {
            return Err(EnvelopeError::Decode("truncated message".into()));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn id(&mut self, field: &str) -> Result<String, EnvelopeError> {
        let len = self.take(1)?[0] as usize;
        if len == 0 {
            return Err(EnvelopeError::Decode(format!("empty {field}")));
        }
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| EnvelopeError::Decode(format!("{field} is not UTF-8")))
    }
}

/// Strict inverse of [`canonical_encode`]: trailing bytes, a wrong version
/// byte, invalid UTF-8 or non-finite params are all errors.
pub fn canonical_decode(bytes: &[u8]) -> Result<CanonicalMessage, EnvelopeError> {
    let mut r = Reader { bytes };
    let version = r.take(1)?[0];
    if version != PROTOCOL_VERSION {
        return Err(EnvelopeError::Decode(format!(
            "unsupported version byte {version:#04x}"
        )));
    }
    let round = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let device_id = r.id("device_id")?;
    let scheme_id = r.id("scheme_id")?;
    let count = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
    if r.bytes.len() != count * 8 {
        return Err(EnvelopeError::Decode(format!(
            "expected {} param bytes, found {}",
            count * 8,
            r.bytes.len()
        )));
    }
    let values = r
        .bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let params =
        ParamVector::new(values).map_err(|e| EnvelopeError::Decode(format!("params: {e}")))?;
    Ok(CanonicalMessage {
        round,
        device_id,
        scheme_id,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use sha2::{Digest, Sha256};

    fn splitmix_params(seed: u64, n: usize) -> Vec<f64> {
        let mut state = seed;
        (0..n)
            .map(|_| {
                state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
                let mut z = state;
                z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
                z ^= z >> 31;
                ((z >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn empty_params_layout() {
        let bytes = canonical_encode(0, "a", "m", &ParamVector::zeros(0)).unwrap();
        let mut expected = vec![0x01];
        expected.extend([0u8; 8]);
        expected.extend([0x01, 0x61, 0x01, 0x6D]);
        expected.extend([0u8; 4]);
        assert_eq!(bytes, expected);
        assert_eq!(bytes.len(), 17);
    }

    #[test]
    fn single_zero_param_layout() {
        let bytes = canonical_encode(1, "a", "m", &ParamVector::new(vec![0.0]).unwrap()).unwrap();
        let mut expected = vec![0x01, 0x01];
        expected.extend([0u8; 7]);
        expected.extend([0x01, 0x61, 0x01, 0x6D]);
        expected.extend([0x01, 0x00, 0x00, 0x00]);
        expected.extend([0u8; 8]);
        assert_eq!(bytes, expected);
        assert_eq!(bytes.len(), 25);
    }

    #[test]
    fn golden_digest_matches_reference_encoder() {
        let params = ParamVector::new(splitmix_params(42, 10)).unwrap();
        assert_eq!(params.as_slice()[0], 0.4831297575436466);
        let bytes = canonical_encode(7, "dev-03", "dilithium2", &params).unwrap();
        assert_eq!(bytes.len(), 111);
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(
            hex,
            "e566a76affc0dff06256e09f638cebddcbe01857e337c589fc81d52adecd19eb"
        );
    }

    #[test]
    fn oversize_and_empty_ids_are_encoding_errors() {
        let p = ParamVector::zeros(1);
        let long = "x".repeat(256);
        assert!(matches!(
            canonical_encode(0, &long, "m", &p),
            Err(EnvelopeError::Encoding(_))
        ));
        assert!(matches!(
            canonical_encode(0, "a", &long, &p),
            Err(EnvelopeError::Encoding(_))
        ));
        assert!(matches!(
            canonical_encode(0, "", "m", &p),
            Err(EnvelopeError::Encoding(_))
        ));
        assert!(canonical_encode(0, &"x".repeat(255), "m", &p).is_ok());
    }

    #[test]
    fn non_finite_params_are_domain_errors() {
        for bad in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
            assert!(matches!(
                ParamVector::new(vec![1.0, bad]),
                Err(EnvelopeError::NonFinite { index: 1 })
            ));
        }
        let mut p = ParamVector::zeros(2);
        assert!(p.set(0, f64::NAN).is_err());
        assert!(p.set(5, 1.0).is_err());
        assert!(serde_json::from_str::<ParamVector>("[1.0, 2.0]").is_ok());
    }

    #[test]
    fn decode_rejects_trailing_and_truncated_bytes() {
        let p = ParamVector::new(vec![1.5, -2.0]).unwrap();
        let mut bytes = canonical_encode(3, "dev", "mock", &p).unwrap();
        assert!(canonical_decode(&bytes[..bytes.len() - 1]).is_err());
        bytes.push(0);
        assert!(canonical_decode(&bytes).is_err());
        bytes.pop();
        bytes[0] = 0x02;
        assert!(canonical_decode(&bytes).is_err());
    }

    fn id_strategy() -> impl Strategy<Value = String> {
        "[a-z0-9\\-]{1,40}"
    }

    fn params_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e6f64..1e6, 0..32)
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(round in any::<u64>(), dev in id_strategy(), sch in id_strategy(), ps in params_strategy()) {
            let params = ParamVector::new(ps).unwrap();
            let bytes = canonical_encode(round, &dev, &sch, &params).unwrap();
            let msg = canonical_decode(&bytes).unwrap();
            prop_assert_eq!(msg, CanonicalMessage { round, device_id: dev, scheme_id: sch, params });
        }

        #[test]
        fn encoding_is_injective(
            a in (any::<u64>(), id_strategy(), id_strategy(), params_strategy()),
            b in (any::<u64>(), id_strategy(), id_strategy(), params_strategy()),
        ) {
            let ea = canonical_encode(a.0, &a.1, &a.2, &ParamVector::new(a.3.clone()).unwrap()).unwrap();
            let eb = canonical_encode(b.0, &b.1, &b.2, &ParamVector::new(b.3.clone()).unwrap()).unwrap();
            let same_tuple = a.0 == b.0 && a.1 == b.1 && a.2 == b.2
                && a.3.len() == b.3.len()
                && a.3.iter().zip(&b.3).all(|(x, y)| x.to_bits() == y.to_bits());
            prop_assert_eq!(ea == eb, same_tuple);
        }
    }
}
