use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::LearningError;

/// Labeled samples, row-major features.
///
/// Every class in `0..n_classes` has at least one sample and every feature
/// is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    n_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        n_classes: usize,
    ) -> Result<Self, LearningError> {
        if dim == 0 || n_classes == 0 {
            return Err(LearningError::Domain(
                "dim and class count must be positive".into(),
            ));
        }
        if features.len() != labels.len() * dim {
            return Err(LearningError::Domain(format!(
                "{} features do not fill {} rows of dim {dim}",
                features.len(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(LearningError::Domain("non-finite feature".into()));
        }
        let mut seen = vec![false; n_classes];
        for &y in &labels {
            *seen.get_mut(y).ok_or_else(|| {
                LearningError::Domain(format!("label {y} outside 0..{n_classes}"))
            })? = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(LearningError::Domain(format!(
                "class {missing} has no samples"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            dim,
            n_classes,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn view<'a>(&'a self, indices: &'a [usize]) -> Shard<'a> {
        Shard {
            data: self,
            indices,
        }
    }

    fn subset(&self, indices: &[usize]) -> Result<Dataset, LearningError> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(features, labels, self.dim, self.n_classes)
    }

    /// Stratified train/test split. Each class keeps at least one sample on
    /// both sides, so every class needs two or more samples.
    pub fn split(
        &self,
        train_fraction: f64,
        seed: u64,
    ) -> Result<(Dataset, Dataset), LearningError> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(LearningError::Domain(format!(
                "train fraction {train_fraction} outside (0, 1)"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in 0..self.n_classes {
            let mut members: Vec<usize> = (0..self.n_samples())
                .filter(|&i| self.labels[i] == class)
                .collect();
            if members.len() < 2 {
                return Err(LearningError::Domain(format!(
                    "class {class} has {} sample(s); a split needs 2",
                    members.len()
                )));
            }
            members.shuffle(&mut rng);
            let n_train = ((members.len() as f64 * train_fraction).round() as usize)
                .clamp(1, members.len() - 1);
            test.extend_from_slice(&members[n_train..]);
            members.truncate(n_train);
            train.extend(members);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train)?, self.subset(&test)?))
    }

    /// `label,f0,f1,...` rows with a header line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), LearningError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["label".to_string()];
        header.extend((0..self.dim).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for i in 0..self.n_samples() {
            let mut rec = vec![self.labels[i].to_string()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// A client's slice of a dataset, by sample index.
#[derive(Debug, Clone, Copy)]
pub struct Shard<'a> {
    pub data: &'a Dataset,
    pub indices: &'a [usize],
}

impl Shard<'_> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Gaussian blobs, one unit-variance blob per class.
///
/// Class centers are Gaussian draws rescaled so that the closest pair sits
/// at `class_separation`. Sample `i` has label `i % n_classes`.
pub fn make_synthetic(
    seed: u64,
    n_samples: usize,
    n_classes: usize,
    dim: usize,
    class_separation: f64,
) -> Result<Dataset, LearningError> {
    if n_classes < 2 || dim < 2 || n_samples < n_classes {
        return Err(LearningError::Domain(format!(
            "need classes >= 2, dim >= 2, samples >= classes; got {n_samples} samples, {n_classes} classes, dim {dim}"
        )));
    }
    if !(class_separation.is_finite() && class_separation > 0.0) {
        return Err(LearningError::Domain(format!(
            "class separation must be positive, got {class_separation}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let mut centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..dim).map(|_| normal()).collect())
        .collect();
    let mut closest = f64::INFINITY;
    for a in 0..n_classes {
        for b in a + 1..n_classes {
            closest = closest.min(euclidean(&centers[a], &centers[b]));
        }
    }
    // Nudge past the target so rounding never lands just under it.
    let scale = class_separation / closest * (1.0 + 1e-9);
    for c in &mut centers {
        c.iter_mut().for_each(|v| *v *= scale);
    }

    let mut features = Vec::with_capacity(n_samples * dim);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let y = i % n_classes;
        labels.push(y);
        for &c in &centers[y] {
            features.push(c + normal());
        }
    }
    Dataset::new(features, labels, dim, n_classes)
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic() {
        let a = make_synthetic(9, 120, 4, 3, 5.0).unwrap();
        let b = make_synthetic(9, 120, 4, 3, 5.0).unwrap();
        let c = make_synthetic(10, 120, 4, 3, 5.0).unwrap();
        let bits = |d: &Dataset| d.features.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.labels, b.labels);
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn one_sample_per_class_at_the_boundary() {
        let d = make_synthetic(1, 5, 5, 2, 1.0).unwrap();
        assert_eq!(d.class_counts(), vec![1; 5]);
    }

    #[test]
    fn degenerate_parameters_are_rejected() {
        assert!(make_synthetic(1, 10, 1, 2, 1.0).is_err());
        assert!(make_synthetic(1, 10, 2, 1, 1.0).is_err());
        assert!(make_synthetic(1, 1, 2, 2, 1.0).is_err());
        assert!(make_synthetic(1, 10, 2, 2, 0.0).is_err());
        assert!(make_synthetic(1, 10, 2, 2, f64::NAN).is_err());
    }

    #[test]
    fn dataset_invariants_are_checked() {
        assert!(Dataset::new(vec![0.0; 4], vec![0, 0], 2, 2).is_err());
        assert!(Dataset::new(vec![0.0; 4], vec![0, 2], 2, 2).is_err());
        assert!(Dataset::new(vec![0.0, f64::NAN], vec![0], 2, 1).is_err());
        assert!(Dataset::new(vec![0.0; 3], vec![0, 1], 2, 2).is_err());
        assert!(Dataset::new(vec![0.0; 4], vec![0, 1], 2, 2).is_ok());
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let d = make_synthetic(3, 200, 4, 3, 2.0).unwrap();
        let (train, test) = d.split(0.8, 5).unwrap();
        assert_eq!(train.n_samples() + test.n_samples(), 200);
        assert_eq!(train.class_counts(), vec![40; 4]);
        assert_eq!(test.class_counts(), vec![10; 4]);
        let tiny = make_synthetic(3, 3, 3, 2, 2.0).unwrap();
        assert!(tiny.split(0.8, 1).is_err());
        assert!(d.split(1.0, 1).is_err());
    }

    #[test]
    fn csv_export_has_label_first() {
        let d = make_synthetic(3, 4, 2, 2, 2.0).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "label,f0,f1");
        assert_eq!(lines.len(), 5);
        assert!(lines[2].starts_with("1,"));
    }
}
