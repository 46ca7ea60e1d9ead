//! Command dispatch for the `esdkf` binary.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use esdkf::graph::check_jointly_strongly_connected;
use esdkf::harness::{
    self, boundedness_report, consistency_report, run_monte_carlo, simulate_run, Execution, ExperimentSpec,
};
use esdkf::observability::check_collective_observability;
use esdkf::scenario::{preset_names, ScenarioFile};
use esdkf::Scenario;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] esdkf::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    /// Process exit status: 2 usage, 3 validation, 4 divergence, 5 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(esdkf::Error::Divergence { .. }) => 4,
            CliError::Core(_) => 3,
            CliError::Io { .. } => 5,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "esdkf", version, about = "Extended state distributed Kalman filter simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Report whether the scenario meets the filter's standing assumptions.
    Check(ScenarioArgs),
    /// Monte Carlo experiment; writes metrics.csv and summary.txt.
    Run(RunArgs),
    /// Single run; writes trace.csv with truth, estimates and errors.
    Trace(TraceArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub scenario: Option<PathBuf>,
    /// Shipped scenario name.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads; 1 runs serially, 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Run index within the seed's stream family.
    #[arg(long, default_value_t = 0)]
    pub run: usize,
}

/// Loads the scenario and applies flag overrides.
pub fn load(args: &ScenarioArgs) -> CliResult<Scenario> {
    let mut file = match (&args.scenario, &args.preset) {
        (Some(path), None) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            ScenarioFile::from_json(&text)?
        }
        (None, Some(name)) => ScenarioFile::preset(name).ok_or_else(|| {
            CliError::Usage(format!("unknown preset `{name}` (available: {})", preset_names().join(", ")))
        })?,
        _ => return Err(CliError::Usage("give exactly one of --scenario or --preset".into())),
    };
    if let Some(runs) = args.runs {
        file.experiment.runs = runs;
    }
    if let Some(horizon) = args.horizon {
        file.experiment.horizon = horizon;
    }
    if let Some(seed) = args.seed {
        file.experiment.seed = seed;
    }
    if let Some(theta) = args.theta {
        file.filter.theta = theta;
    }
    Ok(file.validate()?)
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    match &cli.command {
        Command::Check(args) => {
            let report = cmd_check(&load(args)?)?;
            out.write_all(report.render().as_bytes()).map_err(io_err(Path::new("<stdout>")))
        }
        Command::Run(args) => {
            let scenario = load(&args.scenario)?;
            let summary = cmd_run(&scenario, &args.out, args.threads)?;
            out.write_all(summary.as_bytes()).map_err(io_err(Path::new("<stdout>")))
        }
        Command::Trace(args) => {
            let scenario = load(&args.scenario)?;
            let path = cmd_trace(&scenario, args.run, &args.out)?;
            writeln!(out, "wrote {}", path.display()).map_err(io_err(Path::new("<stdout>")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    /// Largest empirical `E{u²}` per increment channel against its bound `q`.
    pub increment_moment: Vec<(f64, f64)>,
    pub increment_ok: bool,
    /// Smallest Gramian eigenvalue over the checked start times.
    pub gramian_min_eigenvalue: f64,
    pub threshold: f64,
    pub observable: bool,
    /// `(start, end, strongly connected)` per complete interval.
    pub intervals: Vec<(usize, usize, bool)>,
    pub connected: bool,
    pub initial_margin: f64,
    pub initial_ok: bool,
}

impl CheckReport {
    pub fn all_hold(&self) -> bool {
        self.increment_ok && self.observable && self.connected && self.initial_ok
    }

    pub fn render(&self) -> String {
        let verdict = |b: bool| if b { "holds" } else { "VIOLATED" };
        let mut s = String::new();
        let _ = writeln!(s, "noise bounds: {}", verdict(self.increment_ok));
        for (j, (m, q)) in self.increment_moment.iter().enumerate() {
            let _ = writeln!(s, "  increment {}: max E[u^2] = {m:.4}, q = {q}", j + 1);
        }
        let _ = writeln!(
            s,
            "collective observability: {} (min eigenvalue {:.6e}, threshold {})",
            verdict(self.observable),
            self.gramian_min_eigenvalue,
            self.threshold
        );
        let _ = writeln!(s, "joint connectivity: {}", verdict(self.connected));
        if self.intervals.is_empty() {
            let _ = writeln!(s, "  horizon shorter than one interval");
        }
        for (a, b, c) in &self.intervals {
            let _ = writeln!(s, "  steps {a}..{b}: {}", if *c { "strongly connected" } else { "not connected" });
        }
        let _ = writeln!(
            s,
            "initial consistency: {} (margin {:.4})",
            verdict(self.initial_ok),
            self.initial_margin
        );
        s
    }
}

/// Evaluates every assumption; violations are reported, never raised.
pub fn cmd_check(scenario: &Scenario) -> CliResult<CheckReport> {
    let horizon = scenario.experiment.horizon;
    let seed = scenario.experiment.seed;
    let moment = harness::empirical_increment_moment(scenario, 200, horizon.min(200), seed);
    let q = scenario.bounds.increment(0);
    let increment_moment: Vec<(f64, f64)> = moment.iter().copied().zip(q.iter().copied()).collect();

    let cfg = &scenario.observability;
    let last_start = horizon.saturating_sub(cfg.window());
    let mut gramian_min_eigenvalue = f64::INFINITY;
    for k in 0..=last_start {
        let r = check_collective_observability(k, cfg, &scenario.system, &scenario.bounds)?;
        gramian_min_eigenvalue = gramian_min_eigenvalue.min(r.min_eigenvalue);
    }

    let intervals: Vec<(usize, usize, bool)> = match check_jointly_strongly_connected(&scenario.topology, horizon) {
        Ok(v) => v.into_iter().map(|c| (c.interval.start, c.interval.end - 1, c.strongly_connected)).collect(),
        Err(esdkf::Error::EmptyInterval { .. }) => Vec::new(),
        Err(e) => return Err(e.into()),
    };

    let initial = harness::initial_consistency(scenario, 20_000, seed);
    Ok(CheckReport {
        increment_ok: increment_moment.iter().all(|(m, q)| m <= q),
        increment_moment,
        observable: gramian_min_eigenvalue >= cfg.threshold(),
        gramian_min_eigenvalue,
        threshold: cfg.threshold(),
        connected: !intervals.is_empty() && intervals.iter().all(|i| i.2),
        intervals,
        initial_margin: initial.margin,
        initial_ok: initial.consistent,
    })
}

fn create_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> CliResult<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Runs the Monte Carlo experiment, writes `metrics.csv` and `summary.txt`
/// into `out`, and returns the summary text.
pub fn cmd_run(scenario: &Scenario, out: &Path, threads: usize) -> CliResult<String> {
    let mut spec = ExperimentSpec::from_scenario(scenario);
    spec.execution = if threads == 1 { Execution::Serial } else { Execution::Parallel };
    let metrics = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {threads} threads: {e}")))?;
        pool.install(|| run_monte_carlo(&spec))?
    } else {
        run_monte_carlo(&spec)?
    };

    let consistency = consistency_report(&metrics);
    let horizon = metrics.horizon();
    let mut summary = String::new();
    let _ = writeln!(summary, "scenario: {}", scenario.name.as_deref().unwrap_or("(unnamed)"));
    let _ = writeln!(
        summary,
        "runs: {}  horizon: {}  seed: {}  sensors: {}",
        spec.runs, horizon, spec.master_seed, metrics.sensors
    );
    let _ = writeln!(
        summary,
        "consistency violations: {} of {} ({:.4}%)",
        consistency.violation_count,
        horizon * metrics.sensors,
        100.0 * consistency.violation_fraction
    );
    match boundedness_report(&metrics, horizon / 2) {
        Ok(b) => {
            let _ = writeln!(
                summary,
                "boundedness: {} (final-window max {:.4}, global max {:.4}, second-half slope {:.4e})",
                if b.bounded { "bounded" } else { "growth trend" },
                b.final_window_max,
                b.global_max,
                b.second_half_slope
            );
        }
        Err(_) => {
            let _ = writeln!(summary, "boundedness: horizon too short to assess");
        }
    }
    if let (Some(m), Some(t)) = (metrics.mse_avg.last(), metrics.trace_avg.last()) {
        let _ = writeln!(summary, "final mse_avg: {m:.6}  final trace_avg: {t:.6}");
    }

    create_out(out)?;
    let csv_path = out.join("metrics.csv");
    write_file(&csv_path, |w| metrics.write_csv(w).map_err(io::Error::other))?;
    let summary_path = out.join("summary.txt");
    write_file(&summary_path, |w| w.write_all(summary.as_bytes()))?;
    Ok(summary)
}

/// Writes `trace.csv` for run index `run` and returns its path.
pub fn cmd_trace(scenario: &Scenario, run: usize, out: &Path) -> CliResult<PathBuf> {
    let trace = simulate_run(scenario, scenario.experiment.horizon, scenario.experiment.seed, run)?;
    create_out(out)?;
    let path = out.join("trace.csv");
    write_file(&path, |w| trace.write_csv(w).map_err(io::Error::other))?;
    Ok(path)
}
