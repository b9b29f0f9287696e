use serde::Serialize;

use super::{Dataset, LearningError, Shard};
use crate::envelope::ParamVector;

/// Default L2 strength for the reference learner.
pub const DEFAULT_RHO: f64 = 1e-3;

/// A differentiable objective that SGD can minimize.
///
/// `loss_grad` returns the mean loss over `batch` (indices in
/// `0..n_samples()`) plus any regularizer, and writes the matching gradient
/// into `grad`.
pub trait Objective: Sync {
    fn param_len(&self) -> usize;

    fn n_samples(&self) -> usize;

    fn loss_grad(&self, params: &[f64], batch: &[usize], grad: &mut [f64]) -> f64;

    /// Objective over every sample.
    fn full_loss_grad(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let all: Vec<usize> = (0..self.n_samples()).collect();
        self.loss_grad(params, &all, grad)
    }

    fn full_loss(&self, params: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.param_len()];
        self.full_loss_grad(params, &mut scratch)
    }

    /// An upper bound on the gradient Lipschitz constant, if known.
    fn smoothness_bound(&self) -> Option<f64> {
        None
    }
}

/// Multinomial logistic regression with L2 penalty `rho/2 * ||w||^2`.
///
/// Parameters are laid out as the `C x dim` weight matrix (row per class)
/// followed by `C` biases. The penalty covers biases too, which keeps the
/// objective `rho`-strongly convex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogisticModel {
    pub n_classes: usize,
    pub dim: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

impl LogisticModel {
    pub fn for_dataset(dataset: &Dataset, rho: f64) -> Self {
        LogisticModel {
            n_classes: dataset.n_classes(),
            dim: dataset.dim(),
            rho,
        }
    }

    pub fn param_len(&self) -> usize {
        self.n_classes * (self.dim + 1)
    }

    pub fn zeros(&self) -> ParamVector {
        ParamVector::zeros(self.param_len())
    }

    fn check(&self, params: &[f64], dataset: &Dataset) -> Result<(), LearningError> {
        if params.len() != self.param_len()
            || dataset.dim() != self.dim
            || dataset.n_classes() != self.n_classes
        {
            return Err(LearningError::Domain(format!(
                "model expects {} params for {} classes x dim {}, got {} params for {} classes x dim {}",
                self.param_len(),
                self.n_classes,
                self.dim,
                params.len(),
                dataset.n_classes(),
                dataset.dim()
            )));
        }
        Ok(())
    }

    fn logits(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        let bias = &params[self.n_classes * self.dim..];
        for (k, z) in out.iter_mut().enumerate() {
            let w = &params[k * self.dim..(k + 1) * self.dim];
            *z = bias[k] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Softmax in place; returns log-sum-exp of the input.
    fn softmax(z: &mut [f64]) -> f64 {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in z.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        z.iter_mut().for_each(|v| *v /= total);
        max + total.ln()
    }

    pub fn predict(&self, params: &[f64], x: &[f64]) -> usize {
        let mut z = vec![0.0; self.n_classes];
        self.logits(params, x, &mut z);
        // Ties go to the lowest class index.
        let mut best = 0;
        for k in 1..z.len() {
            if z[k] > z[best] {
                best = k;
            }
        }
        best
    }

    fn penalty(&self, params: &[f64]) -> f64 {
        0.5 * self.rho * params.iter().map(|v| v * v).sum::<f64>()
    }

    /// Mean cross-entropy plus penalty over the given sample indices.
    pub fn loss_grad_on(
        &self,
        params: &[f64],
        data: &Dataset,
        samples: impl ExactSizeIterator<Item = usize>,
        grad: &mut [f64],
    ) -> f64 {
        let n = samples.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut z = vec![0.0; self.n_classes];
        let mut ce = 0.0;
        let (gw, gb) = grad.split_at_mut(self.n_classes * self.dim);
        for i in samples {
            let x = data.row(i);
            let y = data.label(i);
            self.logits(params, x, &mut z);
            let zy = z[y];
            let lse = Self::softmax(&mut z);
            ce += lse - zy;
            z[y] -= 1.0;
            for k in 0..self.n_classes {
                let r = z[k] / n;
                gb[k] += r;
                for (g, xv) in gw[k * self.dim..(k + 1) * self.dim].iter_mut().zip(x) {
                    *g += r * xv;
                }
            }
        }
        for (g, w) in grad.iter_mut().zip(params) {
            *g += self.rho * w;
        }
        ce / n + self.penalty(params)
    }

    /// Loss (mean cross-entropy plus penalty) and accuracy on `dataset`.
    pub fn evaluate(
        &self,
        params: &ParamVector,
        dataset: &Dataset,
    ) -> Result<Evaluation, LearningError> {
        let w = params.as_slice();
        self.check(w, dataset)?;
        let mut z = vec![0.0; self.n_classes];
        let mut ce = 0.0;
        let mut correct = 0usize;
        for i in 0..dataset.n_samples() {
            let x = dataset.row(i);
            let y = dataset.label(i);
            if self.predict(w, x) == y {
                correct += 1;
            }
            self.logits(w, x, &mut z);
            let zy = z[y];
            ce += Self::softmax(&mut z) - zy;
        }
        let n = dataset.n_samples() as f64;
        Ok(Evaluation {
            loss: ce / n + self.penalty(w),
            accuracy: correct as f64 / n,
        })
    }

    pub fn on_shard<'a>(&self, shard: Shard<'a>) -> Result<ShardObjective<'a>, LearningError> {
        if shard.is_empty() {
            return Err(LearningError::Domain("empty shard".into()));
        }
        self.check(&vec![0.0; self.param_len()], shard.data)?;
        Ok(ShardObjective {
            model: *self,
            shard,
        })
    }
}

/// The logistic objective restricted to one client's shard.
#[derive(Debug, Clone, Copy)]
pub struct ShardObjective<'a> {
    model: LogisticModel,
    shard: Shard<'a>,
}

impl Objective for ShardObjective<'_> {
    fn param_len(&self) -> usize {
        self.model.param_len()
    }

    fn n_samples(&self) -> usize {
        self.shard.len()
    }

    fn loss_grad(&self, params: &[f64], batch: &[usize], grad: &mut [f64]) -> f64 {
        let idx = self.shard.indices;
        self.model
            .loss_grad_on(params, self.shard.data, batch.iter().map(|&b| idx[b]), grad)
    }

    fn full_loss_grad(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        self.model.loss_grad_on(
            params,
            self.shard.data,
            self.shard.indices.iter().copied(),
            grad,
        )
    }

    fn smoothness_bound(&self) -> Option<f64> {
        // Softmax cross-entropy has logit-Hessian norm <= 1/2, and the logits
        // are linear in the params with squared gain ||x||^2 + 1.
        let data = self.shard.data;
        let mean_sq = self
            .shard
            .indices
            .iter()
            .map(|&i| data.row(i).iter().map(|v| v * v).sum::<f64>() + 1.0)
            .sum::<f64>()
            / self.shard.len() as f64;
        Some(0.5 * mean_sq + self.model.rho)
    }
}

/// `||w - center||^2`, a one-sample objective for sanity checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub center: Vec<f64>,
}

impl Objective for Quadratic {
    fn param_len(&self) -> usize {
        self.center.len()
    }

    fn n_samples(&self) -> usize {
        1
    }

    fn loss_grad(&self, params: &[f64], _batch: &[usize], grad: &mut [f64]) -> f64 {
        let mut loss = 0.0;
        for ((g, w), c) in grad.iter_mut().zip(params).zip(&self.center) {
            let d = w - c;
            *g = 2.0 * d;
            loss += d * d;
        }
        loss
    }

    fn smoothness_bound(&self) -> Option<f64> {
        Some(2.0)
    }
}
