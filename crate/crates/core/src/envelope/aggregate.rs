use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::{verify_update, EnvelopeError, ParamVector, RejectReason, UpdateEnvelope, Verdict};

/// Outcome of filtering one round's envelopes.
#[derive(Debug, Clone, Default, Serialize)]
pub struct FilterReport {
    pub accepted: Vec<String>,
    pub rejected: Vec<(String, RejectReason)>,
    #[serde(skip)]
    pub accepted_params: Vec<ParamVector>,
}

impl FilterReport {
    pub fn total(&self) -> usize {
        self.accepted.len() + self.rejected.len()
    }

    pub fn reason_counts(&self) -> BTreeMap<RejectReason, usize> {
        let mut counts = BTreeMap::new();
        for (_, reason) in &self.rejected {
            *counts.entry(*reason).or_insert(0) += 1;
        }
        counts
    }
}

/// Split envelopes into accepted and rejected.
///
/// Rules, in order: a round other than `expected_round` is `stale_round`;
/// a failed signature check is whatever [`verify_update`] says; a device id
/// that already has an accepted update this round is `duplicate`.
/// Only accepted updates claim a device id, so a forged envelope sent ahead
/// of the genuine one cannot lock the real device out.
///
/// Signature checks run in parallel; the report preserves input order.
pub fn filter_updates(envelopes: &[UpdateEnvelope], expected_round: u64) -> FilterReport {
    filter_updates_timed(envelopes, expected_round).0
}

/// [`filter_updates`] that also returns each envelope's verification time
/// in nanoseconds (0 for envelopes rejected before verification).
pub fn filter_updates_timed(
    envelopes: &[UpdateEnvelope],
    expected_round: u64,
) -> (FilterReport, Vec<u64>) {
    let checked: Vec<(Verdict, u64)> = envelopes
        .par_iter()
        .map(|env| {
            if env.round != expected_round {
                return (Verdict::Rejected(RejectReason::StaleRound), 0);
            }
            let start = Instant::now();
            let verdict = verify_update(env);
            (verdict, start.elapsed().as_nanos() as u64)
        })
        .collect();

    let mut report = FilterReport::default();
    let mut seen = HashSet::new();
    let mut timings = Vec::with_capacity(envelopes.len());
    for (env, (verdict, ns)) in envelopes.iter().zip(checked) {
        timings.push(ns);
        match verdict {
            Verdict::Accepted if !seen.insert(env.device_id.as_str()) => {
                report
                    .rejected
                    .push((env.device_id.clone(), RejectReason::Duplicate));
            }
            Verdict::Accepted => {
                report.accepted.push(env.device_id.clone());
                report.accepted_params.push(env.params.clone());
            }
            Verdict::Rejected(reason) => report.rejected.push((env.device_id.clone(), reason)),
        }
    }
    (report, timings)
}

/// Uniform element-wise mean of the given vectors.
///
/// Accumulates left to right in input order as a running mean
/// `m += (x - m) / k`, which returns `v` exactly when every input is `v`.
pub fn fed_avg(vectors: &[ParamVector]) -> Result<ParamVector, EnvelopeError> {
    let first = vectors.first().ok_or(EnvelopeError::EmptyAggregate)?;
    let len = first.len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != len) {
        return Err(EnvelopeError::LengthMismatch {
            expected: len,
            found: bad.len(),
        });
    }
    let mut mean = first.as_slice().to_vec();
    for (k, v) in vectors.iter().enumerate().skip(1) {
        let count = (k + 1) as f64;
        for (m, x) in mean.iter_mut().zip(v.as_slice()) {
            *m += (x - *m) / count;
        }
    }
    ParamVector::new(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::sign_update;
    use crate::pqc::keygen;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn signed(n: usize, round: u64) -> Vec<UpdateEnvelope> {
        (0..n)
            .map(|i| {
                let kp = keygen("mock", Some(i as u64)).unwrap();
                sign_update(pv(&[i as f64, 1.0]), round, &format!("d{i}"), &kp).unwrap()
            })
            .collect()
    }

    #[test]
    fn all_valid_are_accepted() {
        let r = filter_updates(&signed(5, 3), 3);
        assert_eq!(r.accepted.len(), 5);
        assert!(r.rejected.is_empty());
        assert_eq!(r.accepted, ["d0", "d1", "d2", "d3", "d4"]);
        assert_eq!(r.accepted_params[2], pv(&[2.0, 1.0]));
    }

    #[test]
    fn tampered_envelopes_are_counted_as_bad_signature() {
        let mut envs = signed(5, 0);
        let mut extra = signed(7, 0).split_off(5);
        for e in &mut extra {
            let v = e.params.as_slice()[0];
            e.params.set(0, v + 0.5).unwrap();
        }
        envs.extend(extra);
        let r = filter_updates(&envs, 0);
        assert_eq!(r.accepted.len(), 5);
        assert_eq!(r.rejected.len(), 2);
        assert!(r
            .rejected
            .iter()
            .all(|(_, why)| *why == RejectReason::BadSignature));
        assert_eq!(r.total(), envs.len());
    }

    #[test]
    fn stale_round_is_rejected() {
        let r = filter_updates(&signed(1, 3), 4);
        assert_eq!(r.rejected, [("d0".to_string(), RejectReason::StaleRound)]);
    }

    #[test]
    fn duplicates_after_first_accepted_are_rejected() {
        let mut envs = signed(2, 0);
        envs.push(envs[0].clone());
        let r = filter_updates(&envs, 0);
        assert_eq!(r.accepted, ["d0", "d1"]);
        assert_eq!(r.rejected, [("d0".to_string(), RejectReason::Duplicate)]);
    }

    #[test]
    fn forged_duplicate_ahead_of_genuine_does_not_evict_it() {
        let genuine = signed(1, 0).remove(0);
        let mut forged = genuine.clone();
        forged.params.set(0, 99.0).unwrap();
        let r = filter_updates(&[forged, genuine], 0);
        assert_eq!(r.accepted, ["d0"]);
        assert_eq!(r.rejected[0].1, RejectReason::BadSignature);
    }

    #[test]
    fn fed_avg_small_cases() {
        assert_eq!(
            fed_avg(&[pv(&[1., 2.]), pv(&[1., 2.]), pv(&[1., 2.])]).unwrap(),
            pv(&[1., 2.])
        );
        assert_eq!(
            fed_avg(&[pv(&[0., 2.]), pv(&[2., 4.])]).unwrap(),
            pv(&[1., 3.])
        );
        assert!(matches!(fed_avg(&[]), Err(EnvelopeError::EmptyAggregate)));
        assert!(matches!(
            fed_avg(&[pv(&[1.]), pv(&[1., 2.])]),
            Err(EnvelopeError::LengthMismatch { .. })
        ));
    }

    fn naive_mean(vectors: &[Vec<f64>]) -> Vec<f64> {
        let n = vectors.len() as f64;
        let mut out = Vec::new();
        for j in 0..vectors[0].len() {
            let mut total = 0.0;
            for v in vectors {
                total += v[j];
            }
            out.push(total / n);
        }
        out
    }

    #[test]
    fn fed_avg_matches_naive_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..50 {
            let raw: Vec<Vec<f64>> = (0..7)
                .map(|_| (0..33).map(|_| rng.random_range(-10.0..10.0)).collect())
                .collect();
            let vecs: Vec<_> = raw.iter().map(|v| pv(v)).collect();
            let got = fed_avg(&vecs).unwrap();
            for (g, e) in got.as_slice().iter().zip(naive_mean(&raw)) {
                assert!((g - e).abs() <= 1e-12, "{g} vs {e}");
            }
        }
    }

    proptest! {
        #[test]
        fn fed_avg_of_copies_is_exact(v in prop::collection::vec(-1e9f64..1e9, 1..16), k in 1usize..20) {
            let p = pv(&v);
            let copies = vec![p.clone(); k];
            prop_assert_eq!(fed_avg(&copies).unwrap(), p);
        }

        #[test]
        fn fed_avg_is_permutation_invariant(
            rows in prop::collection::vec(prop::collection::vec(-100f64..100.0, 6), 1..10),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let vecs: Vec<_> = rows.iter().map(|v| pv(v)).collect();
            let mut shuffled = vecs.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let a = fed_avg(&vecs).unwrap();
            let b = fed_avg(&shuffled).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
