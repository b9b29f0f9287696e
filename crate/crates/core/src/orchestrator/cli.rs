use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use super::config::{parse_policy, AdversarySpec, ExperimentConfig};
use super::experiment::{
    output_dir, run_benchmark, run_experiment, BENCH_FILE, REPORT_FILE, ROUNDS_FILE,
};
use super::{Experiment, OrchestratorError};
use crate::envelope::{sign_update, ParamVector};
use crate::learning::idx::{write_images, write_labels};
use crate::pqc::{self, keygen, write_timing_csv};
use crate::topology::{simulate_attack, AdversaryStrategy, SelectionPolicy};

#[derive(Debug, Parser)]
#[command(
    name = "pqfl",
    version,
    about = "Federated learning with post-quantum signed updates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a federated training experiment.
    Run(RunArgs),
    /// Time keygen, sign and verify for each signature scheme.
    BenchSchemes(BenchArgs),
    /// Estimate how often an adversary guesses the server.
    AttackSim(AttackArgs),
    /// Print per-device class histograms of the training partition.
    PartitionStats(PartitionArgs),
    /// Write IDX, envelope and config fixtures.
    MakeFixtures(FixtureArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON experiment config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    devices: Option<usize>,
    #[arg(long)]
    scheme: Option<String>,
    /// Label classes per device.
    #[arg(long)]
    m: Option<usize>,
    /// none, tamper:K, forge:K, server-attack:uniform|last|fixed=ID
    #[arg(long)]
    adversary: Option<AdversarySpec>,
    /// uniform, reputation or fixed=ID
    #[arg(long, value_parser = parse_policy)]
    policy: Option<SelectionPolicy>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (PQFL_OUT takes precedence).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 30)]
    trials: usize,
    /// Message sizes in bytes.
    #[arg(long, value_delimiter = ',', default_value = "1024,8192,65536")]
    sizes: Vec<usize>,
    #[arg(long)]
    include_mock: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyChoice {
    Fixed,
    Uniform,
    Reputation,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GuessChoice {
    Fixed,
    Uniform,
    Last,
    All,
}

#[derive(Debug, Args)]
struct AttackArgs {
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, value_enum, default_value_t = PolicyChoice::All)]
    policy: PolicyChoice,
    #[arg(long, value_enum, default_value_t = GuessChoice::All)]
    adversary: GuessChoice,
    /// Device used by the fixed policy and the fixed guess.
    #[arg(long, default_value = "d0")]
    target: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct PartitionArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    devices: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
}

/// Entry point for the binary: parse `argv` and return the exit code.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_cli(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// 0 on success, 1 on a usage or configuration error, 2 on a runtime error.
pub fn run_cli<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    let result = match parsed.command {
        Command::Run(a) => cmd_run(a, out),
        Command::BenchSchemes(a) => cmd_bench(a, out),
        Command::AttackSim(a) => cmd_attack(a, out),
        Command::PartitionStats(a) => cmd_partition(a, out),
        Command::MakeFixtures(a) => cmd_fixtures(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                OrchestratorError::Config(_) => 1,
                _ => 2,
            }
        }
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), OrchestratorError> {
    out.write_all(text.as_bytes())
        .map_err(|source| OrchestratorError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OrchestratorError + '_ {
    move |source| OrchestratorError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, OrchestratorError> {
    match path {
        Some(p) => ExperimentConfig::from_json_file(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn cmd_run(a: RunArgs, out: &mut dyn Write) -> Result<(), OrchestratorError> {
    let mut config = load_config(a.config.as_deref())?;
    if let Some(v) = a.rounds {
        config.rounds = v;
    }
    if let Some(v) = a.devices {
        config.n_devices = v;
    }
    if let Some(v) = a.scheme {
        config.scheme_id = v;
    }
    if let Some(v) = a.m {
        config.partition_m = v;
    }
    if let Some(v) = a.adversary {
        config.adversary = v;
    }
    if let Some(v) = a.policy {
        config.policy = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.out {
        config.output_dir = v;
    }
    let dir = output_dir(&config);
    let report = run_experiment(config)?;
    let rejected: usize = report.rounds.iter().map(|r| r.rejected).sum();
    let degenerate = report.rounds.iter().filter(|r| r.degenerate).count();
    let mut summary = format!(
        "rounds={} scheme={} final_test_accuracy={:.4} rejected_updates={rejected} degenerate_rounds={degenerate} mean_overhead_fraction={:.4}\n",
        report.rounds.len(),
        report.config.scheme_id,
        report.final_test_accuracy,
        report.mean_overhead_fraction,
    );
    if let Some(c) = &report.convergence {
        summary.push_str(&format!("fitted_exponent={:.4}\n", c.fitted_exponent));
    }
    summary.push_str(&format!(
        "wrote {} and {}\n",
        dir.join(ROUNDS_FILE).display(),
        dir.join(REPORT_FILE).display()
    ));
    write_out(out, &summary)
}

fn cmd_bench(a: BenchArgs, out: &mut dyn Write) -> Result<(), OrchestratorError> {
    if a.trials == 0 || a.sizes.is_empty() {
        return Err(OrchestratorError::Config(
            "need at least one trial and one size".into(),
        ));
    }
    let reports = run_benchmark(a.trials, &a.sizes, a.include_mock)?;
    let mut csv = Vec::new();
    write_timing_csv(&mut csv, &reports)?;

    let dir = match a.out {
        Some(dir) => dir,
        None => output_dir(&ExperimentConfig::default()),
    };
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let path = dir.join(BENCH_FILE);
    fs::write(&path, &csv).map_err(io_err(&path))?;
    write_out(out, &String::from_utf8_lossy(&csv))
}

fn cmd_attack(a: AttackArgs, out: &mut dyn Write) -> Result<(), OrchestratorError> {
    let policies = match a.policy {
        PolicyChoice::Fixed => vec![SelectionPolicy::fixed(&a.target)],
        PolicyChoice::Uniform => vec![SelectionPolicy::uniform(a.seed)],
        PolicyChoice::Reputation => vec![SelectionPolicy::reputation(a.seed)],
        PolicyChoice::All => vec![
            SelectionPolicy::fixed(&a.target),
            SelectionPolicy::uniform(a.seed),
            SelectionPolicy::reputation(a.seed),
        ],
    };
    let guesses = match a.adversary {
        GuessChoice::Fixed => vec![AdversaryStrategy::GuessFixed(a.target.clone())],
        GuessChoice::Uniform => vec![AdversaryStrategy::GuessUniform],
        GuessChoice::Last => vec![AdversaryStrategy::GuessLastServer],
        GuessChoice::All => vec![
            AdversaryStrategy::GuessFixed(a.target.clone()),
            AdversaryStrategy::GuessUniform,
            AdversaryStrategy::GuessLastServer,
        ],
    };
    let mut outcomes = Vec::new();
    for policy in &policies {
        for guess in &guesses {
            outcomes.push(
                simulate_attack(policy, a.n, guess, a.trials)
                    .map_err(|e| OrchestratorError::Config(e.to_string()))?,
            );
        }
    }
    let json = if let [one] = outcomes.as_slice() {
        serde_json::to_string_pretty(one)?
    } else {
        serde_json::to_string_pretty(&outcomes)?
    };
    write_out(out, &format!("{json}\n"))
}

fn cmd_partition(a: PartitionArgs, out: &mut dyn Write) -> Result<(), OrchestratorError> {
    let mut config = load_config(a.config.as_deref())?;
    if let Some(v) = a.devices {
        config.n_devices = v;
    }
    if let Some(v) = a.m {
        config.partition_m = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    // Keys are irrelevant here; mock keeps setup instant.
    config.scheme_id = "mock".into();
    let exp = Experiment::new(config)?;
    let hist = exp.partition.histogram(&exp.train);

    let mut csv = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["device".to_string(), "classes".into(), "total".into()];
    header.extend((0..exp.train.n_classes()).map(|c| format!("class_{c}")));
    csv.write_record(&header)?;
    for (i, (device, counts)) in exp.devices.iter().zip(&hist).enumerate() {
        let classes = exp
            .partition
            .client_classes(i)
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(" ");
        let mut row = vec![device.id.clone(), classes, device.shard.len().to_string()];
        row.extend(counts.iter().map(usize::to_string));
        csv.write_record(&row)?;
    }
    let bytes = csv.into_inner().map_err(|e| OrchestratorError::Io {
        path: PathBuf::from("<buffer>"),
        source: e.into_error(),
    })?;
    write_out(out, &String::from_utf8_lossy(&bytes))
}

fn cmd_fixtures(a: FixtureArgs, out: &mut dyn Write) -> Result<(), OrchestratorError> {
    let dir = a.out;
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut written = Vec::new();
    let mut create = |name: &str| -> Result<(PathBuf, BufWriter<File>), OrchestratorError> {
        let path = dir.join(name);
        let file = File::create(&path).map_err(io_err(&path))?;
        written.push(path.clone());
        Ok((path, BufWriter::new(file)))
    };

    // Four uniform 28x28 images with shades 0, 85, 170, 255.
    let pixels: Vec<u8> = (0..4u8)
        .flat_map(|i| std::iter::repeat_n(i * 85, 28 * 28))
        .collect();
    let (path, mut f) = create("images.idx")?;
    write_images(&mut f, 28, 28, &pixels)
        .and_then(|_| f.flush())
        .map_err(io_err(&path))?;
    let (path, mut f) = create("labels.idx")?;
    write_labels(&mut f, &[3, 1, 0, 2])
        .and_then(|_| f.flush())
        .map_err(io_err(&path))?;

    let params = ParamVector::new(vec![0.25, -1.0, 3.5])?;
    let mut mock_envelope = None;
    for desc in pqc::registry() {
        let kp = keygen(desc.scheme_id(), Some(1))?;
        let env = sign_update(params.clone(), 1, "d0", &kp)?;
        let (path, mut f) = create(&format!("envelope-{}.json", desc.scheme_id()))?;
        writeln!(f, "{}", env.to_json())
            .and_then(|_| f.flush())
            .map_err(io_err(&path))?;
        if desc.scheme_id() == "mock" {
            mock_envelope = Some(env);
        }
    }
    let mut tampered = mock_envelope.expect("mock is registered");
    let v = tampered.params.as_slice()[0];
    tampered.params.set(0, f64::from_bits(v.to_bits() ^ 1))?;
    let (path, mut f) = create("envelope-mock-tampered.json")?;
    writeln!(f, "{}", tampered.to_json())
        .and_then(|_| f.flush())
        .map_err(io_err(&path))?;

    let (path, mut f) = create("experiment.json")?;
    serde_json::to_writer_pretty(&mut f, &ExperimentConfig::default())?;
    writeln!(f).and_then(|_| f.flush()).map_err(io_err(&path))?;

    let listing: String = written
        .iter()
        .map(|p| format!("{}\n", p.display()))
        .collect();
    write_out(out, &listing)
}
