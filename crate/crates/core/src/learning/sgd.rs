use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LearningError, LogisticModel, Objective, Shard};
use crate::envelope::ParamVector;

/// Step size rule; `t` counts from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// `eta0 / sqrt(t)`
    #[default]
    InvSqrt,
    /// `eta0 / t`
    Inverse,
}

impl Schedule {
    pub fn rate(self, eta0: f64, t: usize) -> f64 {
        match self {
            Schedule::Constant => eta0,
            Schedule::InvSqrt => eta0 / (t as f64).sqrt(),
            Schedule::Inverse => eta0 / t as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub seed: u64,
    /// Added to the step counter before computing the rate, so a run can
    /// continue a schedule started elsewhere (e.g. in earlier rounds).
    #[serde(default)]
    pub step_offset: usize,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<(), LearningError> {
        if self.steps == 0 {
            return Err(LearningError::Domain("SGD needs at least one step".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(LearningError::Domain(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(LearningError::Domain("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SgdOutcome {
    pub params: ParamVector,
    /// Full objective after each step.
    pub loss_trace: Vec<f64>,
    /// Largest stochastic gradient norm seen.
    pub max_grad_norm: f64,
}

/// Minibatch SGD. Batches are drawn without replacement from a shuffled
/// pass over the samples; a new shuffle starts whenever a pass runs out.
pub fn sgd(
    initial: &ParamVector,
    objective: &dyn Objective,
    config: &SgdConfig,
) -> Result<SgdOutcome, LearningError> {
    run(initial, objective, config, true)
}

fn run(
    initial: &ParamVector,
    objective: &dyn Objective,
    config: &SgdConfig,
    record_trace: bool,
) -> Result<SgdOutcome, LearningError> {
    config.validate()?;
    let n = objective.n_samples();
    if n == 0 {
        return Err(LearningError::Domain("objective has no samples".into()));
    }
    if initial.len() != objective.param_len() {
        return Err(LearningError::Domain(format!(
            "initial params have length {}, objective wants {}",
            initial.len(),
            objective.param_len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    let mut w = initial.as_slice().to_vec();
    let mut grad = vec![0.0; w.len()];
    let mut scratch = vec![0.0; w.len()];
    let mut trace = Vec::with_capacity(if record_trace { config.steps } else { 0 });
    let mut max_grad_norm = 0.0f64;
    let mut batch = Vec::with_capacity(config.batch_size);

    for t in 1..=config.steps {
        batch.clear();
        while batch.len() < config.batch_size.min(n) {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        objective.loss_grad(&w, &batch, &mut grad);
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        max_grad_norm = max_grad_norm.max(norm);

        let eta = config
            .schedule
            .rate(config.learning_rate, config.step_offset + t);
        for (wj, gj) in w.iter_mut().zip(&grad) {
            *wj -= eta * gj;
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(LearningError::Diverged { step: t });
        }
        if record_trace {
            let loss = objective.full_loss_grad(&w, &mut scratch);
            if !loss.is_finite() {
                return Err(LearningError::Diverged { step: t });
            }
            trace.push(loss);
        }
    }

    Ok(SgdOutcome {
        params: ParamVector::new(w).expect("finite params checked every step"),
        loss_trace: trace,
        max_grad_norm,
    })
}

/// Local training on one client's shard with the logistic model.
pub fn local_sgd(
    initial: &ParamVector,
    model: &LogisticModel,
    shard: Shard<'_>,
    config: &SgdConfig,
) -> Result<SgdOutcome, LearningError> {
    let objective = model.on_shard(shard)?;
    sgd(initial, &objective, config)
}

/// [`local_sgd`] without the per-step loss trace, which costs a full pass
/// over the shard each step. The returned trace is empty.
pub fn local_update(
    initial: &ParamVector,
    model: &LogisticModel,
    shard: Shard<'_>,
    config: &SgdConfig,
) -> Result<SgdOutcome, LearningError> {
    let objective = model.on_shard(shard)?;
    run(initial, &objective, config, false)
}
