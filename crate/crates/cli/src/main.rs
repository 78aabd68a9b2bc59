//! `pivotal`: batch front end for fits, pivots, condition checks and
//! verification experiments.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

/// Thread cap read from the environment when `--threads` is absent.
pub const THREADS_ENV: &str = "PIVOTAL_THREADS";

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<pivotal_core::Error> for CliError {
    fn from(e: pivotal_core::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "pivotal", version, about = "Higher-order likelihood pivots: fits, p-values, condition checks and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Maximum likelihood fit, optionally with the constrained fit at psi0.
    Fit(RunArgs),
    /// Pivot values with Cornish-Fisher and parametric bootstrap p-values.
    Pivot(RunArgs),
    /// Agreement conditions for a pair of pivots.
    EquivCheck(RunArgs),
    /// Stability condition for each pivot kind.
    StabilityCheck(RunArgs),
    /// Bartlett factor and the chi-squared fit before and after correction.
    Bartlett(RunArgs),
    /// Order of agreement of two pivots' p-values across sample sizes.
    VerifyOrder(RunArgs),
    /// Conditional stability of pivots on a location-scale family.
    VerifyStability(RunArgs),
    /// Uniformity of bootstrap p-values under the null.
    VerifyUniformity(RunArgs),
}

impl Command {
    fn split(self) -> (&'static str, RunArgs) {
        match self {
            Command::Fit(a) => ("fit", a),
            Command::Pivot(a) => ("pivot", a),
            Command::EquivCheck(a) => ("equiv-check", a),
            Command::StabilityCheck(a) => ("stability-check", a),
            Command::Bartlett(a) => ("bartlett", a),
            Command::VerifyOrder(a) => ("verify-order", a),
            Command::VerifyStability(a) => ("verify-stability", a),
            Command::VerifyUniformity(a) => ("verify-uniformity", a),
        }
    }
}

/// Flags shared by every subcommand; each overrides the same key of the config file.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model name: exponential, normal-mv, gamma, ls-normal, ls-logistic, ls-t<df>, normal-mean<q>.
    #[arg(long)]
    model: Option<String>,
    /// CSV data file with a header row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Simulate the data at this parameter instead of reading a file.
    #[arg(long, allow_hyphen_values = true)]
    simulate_theta: Option<String>,
    /// Sample size of simulated data.
    #[arg(long)]
    simulate_n: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    psi0: Option<f64>,
    /// Comma-separated pivot kinds.
    #[arg(long = "pivot")]
    pivots: Option<String>,
    /// Two comma-separated pivot kinds.
    #[arg(long)]
    pair: Option<String>,
    /// Comma-separated parameter values.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated sample sizes.
    #[arg(long)]
    n_grid: Option<String>,
    #[arg(long)]
    outer: Option<usize>,
    /// Bootstrap replicates; 0 skips the bootstrap in `pivot`.
    #[arg(long, alias = "b")]
    bootstrap_reps: Option<usize>,
    /// Replicates for the Bartlett experiment.
    #[arg(long)]
    reps: Option<usize>,
    /// Simulation size for cumulant tensors without closed forms.
    #[arg(long)]
    tensor_reps: Option<usize>,
    /// P-value engine for verify-order: cf or bootstrap.
    #[arg(long)]
    mode: Option<String>,
    /// none or tk-flat.
    #[arg(long)]
    adjustment: Option<String>,
    /// as-printed, drop-duplicate or rederived.
    #[arg(long)]
    wec: Option<String>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    grid_half_width: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report path; the report goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Path for the CSV table.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long)]
    threads: Option<usize>,
}

fn list<T: std::str::FromStr>(flag: &str, s: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| CliError::Validation(format!("--{flag}: cannot parse `{x}`"))))
        .collect()
}

fn number(x: f64, flag: &str) -> Result<Value, CliError> {
    serde_json::Number::from_f64(x)
        .map(Value::Number)
        .ok_or_else(|| CliError::Validation(format!("--{flag}: value must be finite")))
}

fn numbers(flag: &str, s: &str) -> Result<Value, CliError> {
    list::<f64>(flag, s)?.into_iter().map(|x| number(x, flag)).collect::<Result<_, _>>().map(Value::Array)
}

impl RunArgs {
    fn overrides(&self) -> Result<Map<String, Value>, CliError> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        if let Some(v) = &self.model {
            put("model", Value::String(v.clone()));
        }
        if let Some(v) = &self.data {
            put("data", Value::String(v.display().to_string()));
        }
        let mut sim = Map::new();
        if let Some(v) = &self.simulate_theta {
            sim.insert("theta".into(), numbers("simulate-theta", v)?);
        }
        if let Some(v) = self.simulate_n {
            sim.insert("n".into(), v.into());
        }
        if !sim.is_empty() {
            put("simulate", Value::Object(sim));
        }
        if let Some(v) = self.psi0 {
            put("psi0", number(v, "psi0")?);
        }
        if let Some(v) = &self.pivots {
            put("pivots", list::<String>("pivot", v)?.into());
        }
        if let Some(v) = &self.pair {
            put("pair", list::<String>("pair", v)?.into());
        }
        if let Some(v) = &self.theta {
            put("theta", numbers("theta", v)?);
        }
        if let Some(v) = self.n {
            put("n", v.into());
        }
        if let Some(v) = &self.n_grid {
            put("n_grid", list::<usize>("n-grid", v)?.into());
        }
        for (k, v) in [("outer", self.outer), ("bootstrap_reps", self.bootstrap_reps), ("reps", self.reps), ("tensor_reps", self.tensor_reps)] {
            if let Some(v) = v {
                put(k, v.into());
            }
        }
        for (k, v) in [("mode", &self.mode), ("adjustment", &self.adjustment), ("wec", &self.wec)] {
            if let Some(v) = v {
                put(k, Value::String(v.clone()));
            }
        }
        let mut grid = Map::new();
        if let Some(v) = self.grid_points {
            grid.insert("points".into(), v.into());
        }
        if let Some(v) = self.grid_half_width {
            grid.insert("half_width_se".into(), number(v, "grid-half-width")?);
        }
        if !grid.is_empty() {
            put("grid", Value::Object(grid));
        }
        if let Some(v) = self.seed {
            put("seed", v.into());
        }
        if let Some(v) = &self.out {
            put("out", Value::String(v.display().to_string()));
        }
        if let Some(v) = &self.csv {
            put("csv", Value::String(v.display().to_string()));
        }
        Ok(m)
    }
}

fn thread_cap(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(s) => Some(s.trim().parse().map_err(|_| CliError::Validation(format!("{THREADS_ENV} must be a positive integer, got `{s}`")))?),
            Err(_) => None,
        },
    };
    match n {
        Some(0) => Err(CliError::Validation("thread cap must be at least 1".into())),
        n => Ok(n),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, args) = cli.command.split();
    if let Some(n) = thread_cap(args.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("cannot set thread cap: {e}")))?;
    }
    let mut cfg = config::load(args.config.as_deref(), args.overrides()?)?;
    cfg.command = Some(name.to_string());
    let output = commands::dispatch(name, &mut cfg)?;
    report::write(&cfg, output)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
