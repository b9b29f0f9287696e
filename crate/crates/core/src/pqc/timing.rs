use std::io::Write;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::backend::{keygen_for, sign, verify};
use super::{PqcError, SchemeId};

const WARMUP_ITERATIONS: usize = 3;

/// min / median / p95 of a set of durations, nearest-rank, in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DurationSummary {
    pub min: u64,
    pub median: u64,
    pub p95: u64,
}

impl DurationSummary {
    /// Panics on an empty sample set.
    pub fn from_samples(samples: &[u64]) -> Self {
        assert!(!samples.is_empty(), "summary of an empty sample set");
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let rank = |q: f64| {
            let r = (q * sorted.len() as f64).ceil() as usize;
            sorted[r.clamp(1, sorted.len()) - 1]
        };
        DurationSummary {
            min: sorted[0],
            median: rank(0.5),
            p95: rank(0.95),
        }
    }
}

/// Key generation, signing and verification timings for one scheme.
#[derive(Debug, Clone, Serialize)]
pub struct TimingReport {
    pub scheme_id: SchemeId,
    pub trials: usize,
    pub message_len: usize,
    pub key_gen_ns: DurationSummary,
    pub sign_ns: DurationSummary,
    pub verify_ns: DurationSummary,
}

#[derive(Serialize)]
struct TimingCsvRow {
    scheme_id: &'static str,
    message_len: usize,
    trials: usize,
    key_ns_med: u64,
    sign_ns_med: u64,
    verify_ns_med: u64,
    sign_ns_p95: u64,
    verify_ns_p95: u64,
}

impl From<&TimingReport> for TimingCsvRow {
    fn from(r: &TimingReport) -> Self {
        TimingCsvRow {
            scheme_id: r.scheme_id.as_str(),
            message_len: r.message_len,
            trials: r.trials,
            key_ns_med: r.key_gen_ns.median,
            sign_ns_med: r.sign_ns.median,
            verify_ns_med: r.verify_ns.median,
            sign_ns_p95: r.sign_ns.p95,
            verify_ns_p95: r.verify_ns.p95,
        }
    }
}

/// Write reports as `bench.csv` rows (header included).
pub fn write_timing_csv<W: Write>(out: W, reports: &[TimingReport]) -> Result<(), PqcError> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(TimingCsvRow::from(r))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn elapsed_ns(start: Instant) -> u64 {
    // Clamp to 1ns so that a coarse clock never reports a zero-length op.
    (start.elapsed().as_nanos() as u64).max(1)
}

/// Time keygen, sign and verify for `trials` rounds on random messages of
/// `message_len` bytes. Three untimed warm-up iterations run first.
pub fn timing_probe(
    scheme_id: &str,
    message_len: usize,
    trials: usize,
) -> Result<TimingReport, PqcError> {
    let scheme: SchemeId = scheme_id.parse()?;
    if trials == 0 {
        return Err(PqcError::NoTrials);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x7157_u64 ^ message_len as u64);
    let mut message = vec![0u8; message_len];

    let one_trial = |message: &[u8]| -> Result<(u64, u64, u64), PqcError> {
        let t = Instant::now();
        let kp = keygen_for(scheme, None);
        let key_ns = elapsed_ns(t);

        let t = Instant::now();
        let sig = sign(&kp, message)?;
        let sign_ns = elapsed_ns(t);

        let t = Instant::now();
        let ok = verify(scheme, kp.public_key(), message, &sig);
        let verify_ns = elapsed_ns(t);

        if !ok {
            return Err(PqcError::Backend {
                scheme: scheme.to_string(),
                message: "fresh signature failed to verify during timing probe".into(),
            });
        }
        Ok((key_ns, sign_ns, verify_ns))
    };

    for _ in 0..WARMUP_ITERATIONS {
        rng.fill_bytes(&mut message);
        one_trial(&message)?;
    }

    let mut key = Vec::with_capacity(trials);
    let mut sig = Vec::with_capacity(trials);
    let mut ver = Vec::with_capacity(trials);
    for _ in 0..trials {
        rng.fill_bytes(&mut message);
        let (k, s, v) = one_trial(&message)?;
        key.push(k);
        sig.push(s);
        ver.push(v);
    }

    Ok(TimingReport {
        scheme_id: scheme,
        trials,
        message_len,
        key_gen_ns: DurationSummary::from_samples(&key),
        sign_ns: DurationSummary::from_samples(&sig),
        verify_ns: DurationSummary::from_samples(&ver),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_trial_collapses_summary() {
        let s = DurationSummary::from_samples(&[42]);
        assert_eq!((s.min, s.median, s.p95), (42, 42, 42));
        let r = timing_probe("mock", 64, 1).unwrap();
        assert_eq!(r.sign_ns.min, r.sign_ns.median);
        assert_eq!(r.sign_ns.median, r.sign_ns.p95);
    }

    #[test]
    fn nearest_rank_summary() {
        let samples: Vec<u64> = (1..=20).rev().collect();
        let s = DurationSummary::from_samples(&samples);
        assert_eq!(s.min, 1);
        assert_eq!(s.median, 10);
        assert_eq!(s.p95, 19);
    }

    #[test]
    fn probe_rejects_zero_trials_and_unknown_scheme() {
        assert!(matches!(
            timing_probe("mock", 8, 0),
            Err(PqcError::NoTrials)
        ));
        assert!(matches!(
            timing_probe("rsa", 8, 3),
            Err(PqcError::UnknownScheme(_))
        ));
    }

    #[test]
    fn real_scheme_durations_are_positive_and_ordered() {
        let r = timing_probe("dilithium2", 1024, 10).unwrap();
        for s in [r.key_gen_ns, r.sign_ns, r.verify_ns] {
            assert!(s.min > 0);
            assert!(s.min <= s.median && s.median <= s.p95);
        }
    }

    #[test]
    fn csv_layout_is_fixed() {
        let r = timing_probe("mock", 16, 2).unwrap();
        let mut buf = Vec::new();
        write_timing_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "scheme_id,message_len,trials,key_ns_med,sign_ns_med,verify_ns_med,sign_ns_p95,verify_ns_p95"
        );
        assert!(lines.next().unwrap().starts_with("mock,16,2,"));
    }
}
