//! Empirical convergence rate of SGD on a convex, smooth objective.
//!
//! The rate is read off as the least-squares slope of `ln(f(w_t) - f*)`
//! against `ln t` over the trailing half of a loss trace. `f*` comes from a
//! long accelerated full-batch run. The gradient bound `B` and smoothness
//! `L` are reported next to the fit together with the gap bound
//! `2 B^2 L / sqrt(T)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{sgd, LearningError, Objective, SgdConfig};
use crate::envelope::ParamVector;

pub const MIN_TRACE_LEN: usize = 64;

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub loss_trace: Vec<f64>,
    pub optimum_estimate: f64,
    /// Slope of `ln(gap)` vs `ln(t)`.
    pub fitted_exponent: f64,
    pub intercept: f64,
    /// First step (1-based) of the fit window.
    pub window_start: usize,
    pub gradient_bound_b: Option<f64>,
    pub smoothness_estimate_l: Option<f64>,
}

impl ConvergenceReport {
    pub fn final_gap(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(f64::NAN) - self.optimum_estimate
    }

    /// `2 B^2 L / sqrt(T)`, when both constants are known.
    pub fn gap_bound(&self) -> Option<f64> {
        let b = self.gradient_bound_b?;
        let l = self.smoothness_estimate_l?;
        Some(2.0 * b * b * l / (self.loss_trace.len() as f64).sqrt())
    }
}

/// `2 B^2 / (eta_t t)`: the iterate-distance bound at step `t`.
pub fn distance_bound(gradient_bound: f64, eta_t: f64, t: usize) -> f64 {
    2.0 * gradient_bound * gradient_bound / (eta_t * t as f64)
}

/// Fit the power law of the optimality gap over the trailing half.
pub fn fit_convergence(
    loss_trace: &[f64],
    optimum_estimate: f64,
) -> Result<ConvergenceReport, LearningError> {
    if loss_trace.len() < MIN_TRACE_LEN {
        return Err(LearningError::Fit(format!(
            "trace has {} points, need {MIN_TRACE_LEN}",
            loss_trace.len()
        )));
    }
    if loss_trace.iter().any(|v| !v.is_finite()) || !optimum_estimate.is_finite() {
        return Err(LearningError::Fit("non-finite loss or optimum".into()));
    }
    let start = loss_trace.len() / 2;
    let mut xs = Vec::with_capacity(loss_trace.len() - start);
    let mut ys = Vec::with_capacity(xs.capacity());
    for (i, &f) in loss_trace.iter().enumerate().skip(start) {
        let gap = f - optimum_estimate;
        if gap <= 0.0 {
            return Err(LearningError::Fit(format!(
                "gap {gap:e} at step {} is not positive: trace already at the optimum",
                i + 1
            )));
        }
        xs.push(((i + 1) as f64).ln());
        ys.push(gap.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    Ok(ConvergenceReport {
        loss_trace: loss_trace.to_vec(),
        optimum_estimate,
        fitted_exponent: slope,
        intercept: my - slope * mx,
        window_start: start + 1,
        gradient_bound_b: None,
        smoothness_estimate_l: None,
    })
}

/// Minimize with Nesterov-accelerated full-batch gradient descent.
///
/// Uses the objective's smoothness bound for the step and `mu` (a strong
/// convexity lower bound) for the momentum. Returns the best point seen.
pub fn reference_optimum(
    objective: &dyn Objective,
    initial: &ParamVector,
    mu: f64,
    iterations: usize,
) -> Result<(ParamVector, f64), LearningError> {
    let l = objective
        .smoothness_bound()
        .ok_or_else(|| LearningError::Fit("objective provides no smoothness bound".into()))?;
    let kappa_root = (l / mu.max(f64::MIN_POSITIVE)).sqrt();
    let momentum = (kappa_root - 1.0) / (kappa_root + 1.0);
    let step = 1.0 / l;

    let mut x = initial.as_slice().to_vec();
    let mut y = x.clone();
    let mut grad = vec![0.0; x.len()];
    let mut best = (x.clone(), objective.full_loss(&x));
    for _ in 0..iterations {
        objective.full_loss_grad(&y, &mut grad);
        let prev = x.clone();
        for ((xj, yj), gj) in x.iter_mut().zip(&y).zip(&grad) {
            *xj = yj - step * gj;
        }
        for ((yj, xj), pj) in y.iter_mut().zip(&x).zip(&prev) {
            *yj = xj + momentum * (xj - pj);
        }
        let f = objective.full_loss(&x);
        if !f.is_finite() {
            return Err(LearningError::Fit("reference run diverged".into()));
        }
        if f < best.1 {
            best = (x.clone(), f);
        }
    }
    let params = ParamVector::new(best.0).expect("finite");
    Ok((params, best.1))
}

/// Largest `||grad f(x) - grad f(y)|| / ||x - y||` over random pairs drawn
/// uniformly from the box `center +- radius`.
pub fn estimate_smoothness(
    objective: &dyn Objective,
    center: &[f64],
    radius: f64,
    pairs: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gx = vec![0.0; center.len()];
    let mut gy = vec![0.0; center.len()];
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let x: Vec<f64> = center
            .iter()
            .map(|c| c + rng.random_range(-radius..radius))
            .collect();
        let y: Vec<f64> = center
            .iter()
            .map(|c| c + rng.random_range(-radius..radius))
            .collect();
        objective.full_loss_grad(&x, &mut gx);
        objective.full_loss_grad(&y, &mut gy);
        let num: f64 = gx
            .iter()
            .zip(&gy)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if den > 0.0 {
            worst = worst.max(num / den);
        }
    }
    worst
}

/// Run SGD, compute a reference optimum, fit the rate and attach `B`, `L`.
pub fn analyze_convergence(
    objective: &dyn Objective,
    initial: &ParamVector,
    config: &SgdConfig,
    mu: f64,
) -> Result<ConvergenceReport, LearningError> {
    let run = sgd(initial, objective, config)?;
    let (opt, f_star) = reference_optimum(objective, initial, mu, 8_000)?;
    let trace_min = run.loss_trace.iter().copied().fold(f64::INFINITY, f64::min);
    let f_star = f_star.min(trace_min - f64::EPSILON * trace_min.abs());
    let mut report = fit_convergence(&run.loss_trace, f_star)?;
    report.gradient_bound_b = Some(run.max_grad_norm);
    let radius = opt
        .as_slice()
        .iter()
        .zip(run.params.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        .max(0.5);
    report.smoothness_estimate_l = Some(estimate_smoothness(
        objective,
        opt.as_slice(),
        radius,
        200,
        config.seed,
    ));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::{make_synthetic, LogisticModel, Quadratic, Schedule, DEFAULT_RHO};

    fn power_trace(c: f64, exponent: f64, len: usize, floor: f64) -> Vec<f64> {
        (1..=len)
            .map(|t| floor + c * (t as f64).powf(exponent))
            .collect()
    }

    #[test]
    fn exact_power_laws_are_recovered() {
        let r = fit_convergence(&power_trace(3.0, -0.5, 4096, 1.25), 1.25).unwrap();
        assert!(
            (r.fitted_exponent + 0.5).abs() < 0.01,
            "{}",
            r.fitted_exponent
        );
        let r = fit_convergence(&power_trace(0.7, -1.0, 500, -2.0), -2.0).unwrap();
        assert!(
            (r.fitted_exponent + 1.0).abs() < 0.01,
            "{}",
            r.fitted_exponent
        );
        assert_eq!(r.window_start, 251);
    }

    #[test]
    fn short_or_converged_traces_are_fit_errors() {
        assert!(fit_convergence(&[1.0; 63], 0.0).is_err());
        let mut t = power_trace(1.0, -0.5, 100, 0.0);
        *t.last_mut().unwrap() = 0.0;
        assert!(matches!(
            fit_convergence(&t, 0.0),
            Err(LearningError::Fit(_))
        ));
    }

    #[test]
    fn reference_optimum_finds_quadratic_minimum() {
        let q = Quadratic {
            center: vec![1.0, -2.0],
        };
        let (p, f) = reference_optimum(&q, &ParamVector::zeros(2), 2.0, 50).unwrap();
        assert!(f < 1e-20);
        assert!((p.as_slice()[1] + 2.0).abs() < 1e-10);
    }

    #[test]
    fn distance_bound_formula() {
        assert_eq!(distance_bound(2.0, 0.5, 4), 4.0);
    }

    fn smoothness_for_seed(seed: u64) -> f64 {
        let d = make_synthetic(42, 300, 3, 3, 2.0).unwrap();
        let idx: Vec<usize> = (0..d.n_samples()).collect();
        let model = LogisticModel::for_dataset(&d, DEFAULT_RHO);
        let obj = model.on_shard(d.view(&idx)).unwrap();
        let est = estimate_smoothness(&obj, &vec![0.0; obj.param_len()], 0.5, 300, seed);
        assert!(est <= obj.smoothness_bound().unwrap() + 1e-9);
        est
    }

    #[test]
    fn smoothness_estimate_is_stable_across_seeds() {
        let ests: Vec<f64> = [1, 2, 3].into_iter().map(smoothness_for_seed).collect();
        let mean = ests.iter().sum::<f64>() / 3.0;
        for e in &ests {
            assert!(e.is_finite() && *e > 0.0);
            assert!((e - mean).abs() <= 0.25 * mean, "{ests:?}");
        }
    }

    #[test]
    fn trailing_minimum_improves_as_steps_double() {
        let d = make_synthetic(42, 600, 3, 4, 2.0).unwrap();
        let idx: Vec<usize> = (0..d.n_samples()).collect();
        let model = LogisticModel::for_dataset(&d, DEFAULT_RHO);
        let obj = model.on_shard(d.view(&idx)).unwrap();
        let mut prev = f64::INFINITY;
        for steps in [256, 512, 1024, 2048, 4096] {
            let cfg = SgdConfig {
                steps,
                learning_rate: 0.5,
                schedule: Schedule::InvSqrt,
                batch_size: 4,
                seed: 42,
                step_offset: 0,
            };
            let run = sgd(&model.zeros(), &obj, &cfg).unwrap();
            let tail = &run.loss_trace[steps / 2..];
            let m = tail.iter().copied().fold(f64::INFINITY, f64::min);
            assert!(m <= prev, "{steps}: {m} > {prev}");
            prev = m;
        }
    }
}
