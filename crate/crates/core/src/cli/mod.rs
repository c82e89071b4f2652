//! `bridgeflow` command-line interface.
//!
//! Exit codes: 0 success, 1 failed check or I/O error, 2 usage or
//! configuration error, 3 numerical failure.

mod commands;
pub mod manifest;
mod run;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::BridgeError;
use crate::model::Activation;
use crate::objectives::ObjectiveKind;
use crate::sampler::SamplerMode;
use crate::trainer::OptimizerKind;
use crate::verify::Suite;

pub use manifest::{RunManifest, MANIFEST_FILE};
pub use run::{AblateRun, Axis, ModelSpec, SampleRun, TrainRun};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "BRIDGEFLOW_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "bridgeflow", version, about = "Brownian-bridge generative modeling toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw task pairs and bridge states; report empirical vs exact bridge variance.
    Simulate(SimulateArgs),
    /// Run the statistical self-check suites.
    Verify(VerifyArgs),
    /// Per-time target magnitude S(t) and cumulative share C(t) per objective.
    Profile(ProfileArgs),
    /// Train a velocity network on a synthetic task.
    Train(TrainArgs),
    /// Sample endpoints from a trained model or the oracle field and evaluate them.
    Sample(SampleArgs),
    /// Train and evaluate along one configuration axis.
    Ablate(AblateArgs),
    /// Inference time grids.
    Schedule {
        #[command(subcommand)]
        action: ScheduleAction,
    },
}

#[derive(Debug, Args)]
pub struct OutDir {
    /// Output directory (default: $BRIDGEFLOW_OUT_DIR, then runs/<command>).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl OutDir {
    fn resolve(&self, command: &str) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs").join(command))
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "gaussian_shift")]
    pub task: String,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 1.0)]
    pub s: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value = "all")]
    pub suite: Suite,
    /// Monte-Carlo draws per statistical check.
    #[arg(long)]
    pub mc: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative tolerance for variance and ratio checks.
    #[arg(long)]
    pub tol_rel: Option<f64>,
    /// Tolerance for mean checks, in standard errors.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Also write the report and a manifest into this directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Objectives to profile (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "displacement,velocity,stabilized")]
    pub objective: Vec<ObjectiveKind>,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    /// Squared endpoint distance |x1 - x0|^2.
    #[arg(long, default_value_t = 1.0)]
    pub distance_sq: f64,
    #[arg(long, default_value_t = 1.0)]
    pub s: f64,
    /// Grid intervals on [0, 0.999].
    #[arg(long, default_value_t = 999)]
    pub intervals: usize,
    /// Monte-Carlo draws per grid point; 0 uses the closed form.
    #[arg(long, default_value_t = 0)]
    pub mc: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write profile.svg.
    #[arg(long)]
    pub svg: bool,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON config file (or a previous run's manifest).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Task preset name.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub objective: Option<ObjectiveKind>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub t_clamp: Option<f64>,
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Hidden layer widths, e.g. `64,64`.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub time_features: Option<usize>,
    /// Train with the task context replaced by zeros.
    #[arg(long)]
    pub zero_context: bool,
    #[arg(long)]
    pub seed: u64,
    /// Write a per-sample debug log and a hash of the consumed stream.
    #[arg(long)]
    pub debug: bool,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Parameter file written by `train`.
    #[arg(long, conflicts_with = "oracle")]
    pub params: Option<PathBuf>,
    /// Use the analytic drift toward each pair's true target.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub task: Option<String>,
    /// Number of sampler steps.
    #[arg(long = "N", visible_alias = "steps")]
    pub steps: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub mode: Option<SamplerMode>,
    #[arg(long)]
    pub s: Option<f64>,
    /// Number of fresh pairs to sample and score.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Export the full paths of the first K runs.
    #[arg(long)]
    pub trajectories: Option<usize>,
    /// Feed the model zeros instead of the task context.
    #[arg(long)]
    pub zero_context: bool,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Base configuration: `{"train": {...}, "sample": {...}}`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub axis: Axis,
    /// Axis values (comma separated, at least two).
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Subcommand)]
pub enum ScheduleAction {
    /// Print the grid as CSV `i,t`.
    Dump {
        #[arg(long = "N", visible_alias = "steps")]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        /// Write schedule.csv and a manifest here instead of printing.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

/// Why a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    /// A verification or consistency check failed.
    Check(String),
    Error(BridgeError),
}

impl From<BridgeError> for Failure {
    fn from(e: BridgeError) -> Self {
        Failure::Error(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Check(_) => EXIT_FAILURE,
            Failure::Error(e) if e.is_numerical() => EXIT_NUMERICAL,
            Failure::Error(BridgeError::Io { .. }) => EXIT_FAILURE,
            Failure::Error(_) => EXIT_USAGE,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Check(msg) => write!(f, "check failed: {msg}"),
            Failure::Error(e) => write!(f, "{e}"),
        }
    }
}

pub type CmdResult = std::result::Result<(), Failure>;

pub fn execute(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Simulate(args) => {
            let out = args.out.resolve("simulate");
            commands::simulate(&args, &out)
        }
        Command::Verify(args) => commands::verify(&args),
        Command::Profile(args) => {
            let out = args.out.resolve("profile");
            commands::profile(&args, &out)
        }
        Command::Train(args) => {
            let out = args.out.resolve("train");
            run::train_command(&args, &out)
        }
        Command::Sample(args) => {
            let out = args.out.resolve("sample");
            run::sample_command(&args, &out)
        }
        Command::Ablate(args) => {
            let out = args.out.resolve("ablate");
            run::ablate_command(&args, &out)
        }
        Command::Schedule {
            action: ScheduleAction::Dump { steps, gamma, out_dir },
        } => commands::schedule_dump(steps, gamma, out_dir.as_deref()),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(failure) => {
            eprintln!("bridgeflow: {failure}");
            failure.exit_code()
        }
    }
}

pub fn main_entry() -> i32 {
    run_with(std::env::args_os())
}
