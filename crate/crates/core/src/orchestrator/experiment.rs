use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{Experiment, ExperimentConfig, OrchestratorError, RoundLog};
use crate::learning::{
    fit_convergence, reference_optimum, ConvergenceReport, Objective, MIN_TRACE_LEN,
};
use crate::pqc::{self, timing_probe, write_timing_csv, TimingReport};
use crate::topology::{simulate_attack, AttackOutcome};

pub const ROUNDS_FILE: &str = "rounds.csv";
pub const REPORT_FILE: &str = "report.json";
pub const BENCH_FILE: &str = "bench.csv";
pub const OUT_ENV: &str = "PQFL_OUT";

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rounds: Vec<RoundLog>,
    /// Fit over the per-round global training loss; needs enough rounds.
    pub convergence: Option<ConvergenceReport>,
    pub timing: Vec<TimingReport>,
    pub attack: Option<AttackOutcome>,
    pub mean_overhead_fraction: f64,
    pub final_test_accuracy: f64,
}

/// `PQFL_OUT` if set, else the configured directory.
pub fn output_dir(config: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => config.output_dir.clone(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OrchestratorError + '_ {
    move |source| OrchestratorError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Run every round, writing `rounds.csv` as it goes and `report.json` at
/// the end. Rows already written stay on disk if a later round fails.
pub fn run_experiment(config: ExperimentConfig) -> Result<ExperimentReport, OrchestratorError> {
    let dir = output_dir(&config);
    let experiment = Experiment::new(config)?;
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let rounds_path = dir.join(ROUNDS_FILE);
    let file = File::create(&rounds_path).map_err(io_err(&rounds_path))?;
    let mut csv = csv::Writer::from_writer(file);
    let mut state = experiment.initial_state();
    let mut logs = Vec::with_capacity(experiment.config.rounds);
    for round in 1..=experiment.config.rounds as u64 {
        let (next, log) = experiment.run_round(&state, round)?;
        csv.serialize(&log)?;
        csv.flush().map_err(io_err(&rounds_path))?;
        logs.push(log);
        state = next;
    }
    drop(csv);

    let config = &experiment.config;
    let convergence = fit_rounds(&experiment, &logs);
    let mut timing = Vec::new();
    if let Some(bench) = &config.benchmark {
        timing = run_benchmark(bench.trials, &bench.message_sizes, bench.include_mock)?;
        let path = dir.join(BENCH_FILE);
        let file = File::create(&path).map_err(io_err(&path))?;
        write_timing_csv(BufWriter::new(file), &timing)?;
    }
    let attack = match &config.attack_sim {
        Some(sim) => Some(simulate_attack(
            &config.effective_policy(),
            config.n_devices,
            &sim.strategy,
            sim.trials,
        )?),
        None => None,
    };

    let report = ExperimentReport {
        config: config.clone(),
        mean_overhead_fraction: logs.iter().map(|l| l.overhead_fraction).sum::<f64>()
            / logs.len() as f64,
        final_test_accuracy: logs.last().map_or(f64::NAN, |l| l.test_accuracy),
        rounds: logs,
        convergence,
        timing,
        attack,
    };
    let path = dir.join(REPORT_FILE);
    let mut out = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    serde_json::to_writer_pretty(&mut out, &report)?;
    out.flush().map_err(io_err(&path))?;
    Ok(report)
}

/// Timing probes for the real schemes (plus mock if asked) at each size.
pub fn run_benchmark(
    trials: usize,
    sizes: &[usize],
    include_mock: bool,
) -> Result<Vec<TimingReport>, OrchestratorError> {
    let mut out = Vec::new();
    for desc in pqc::registry() {
        if !desc.post_quantum && !include_mock {
            continue;
        }
        for &size in sizes {
            out.push(timing_probe(desc.scheme_id(), size, trials)?);
        }
    }
    Ok(out)
}

/// Global training loss per round against the pooled-train optimum.
fn fit_rounds(experiment: &Experiment, logs: &[RoundLog]) -> Option<ConvergenceReport> {
    if logs.len() < MIN_TRACE_LEN {
        return None;
    }
    let all: Vec<usize> = (0..experiment.train.n_samples()).collect();
    let objective = experiment
        .model
        .on_shard(experiment.train.view(&all))
        .ok()?;
    let mu = experiment.config.rho.max(1e-6);
    let (_, f_star) = reference_optimum(&objective, &experiment.model.zeros(), mu, 2000).ok()?;
    let trace: Vec<f64> = logs.iter().map(|l| l.train_loss).collect();
    let trace_min = trace.iter().copied().fold(f64::INFINITY, f64::min);
    let f_star = f_star.min(trace_min - f64::EPSILON * trace_min.abs());
    let mut report = fit_convergence(&trace, f_star).ok()?;
    report.smoothness_estimate_l = objective.smoothness_bound();
    Some(report)
}
