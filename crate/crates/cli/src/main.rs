//! `qnd`: validate, simulate, enumerate, rate and identify QND measurement chains.
//!
//! Exit codes: 0 success, 2 invalid input (arguments, config, kernel, record
//! files), 3 runtime failure (I/O, resource caps, impossible records).

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qnd_core::config::ArithmeticMode;

#[derive(Debug, Parser)]
#[command(name = "qnd", version, about = "Repeated QND measurement chains on the probability simplex")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Each one can also be set through the
/// `QND_`-prefixed environment variable named next to it; flags win.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration
    #[arg(long, global = true, env = "QND_CONFIG")]
    pub config: Option<PathBuf>,
    /// Built-in model used when no config is given
    #[arg(long, global = true, env = "QND_PRESET", value_enum)]
    pub preset: Option<Preset>,
    /// Cavity preset: phase shift per photon
    #[arg(long, global = true, env = "QND_THETA", allow_negative_numbers = true)]
    pub theta: Option<f64>,
    /// Cavity preset: comma-separated readout angles, cycled step by step
    #[arg(long, global = true, env = "QND_PHI_SCHEDULE", value_delimiter = ',', allow_negative_numbers = true)]
    pub phi_schedule: Option<Vec<f64>>,
    /// Cavity preset: largest photon number
    #[arg(long, global = true, env = "QND_N_MAX")]
    pub n_max: Option<usize>,
    /// Master seed; trajectory k always uses stream k
    #[arg(long, global = true, env = "QND_SEED")]
    pub seed: Option<u64>,
    /// Ensemble size
    #[arg(long, global = true, env = "QND_TRAJECTORIES")]
    pub trajectories: Option<usize>,
    /// Step budget per trajectory
    #[arg(long, global = true, env = "QND_MAX_STEPS")]
    pub max_steps: Option<u64>,
    /// Worker threads (0 = all cores); never changes results
    #[arg(long, global = true, env = "QND_THREADS")]
    pub threads: Option<usize>,
    /// Directory for outputs and manifest.json
    #[arg(long, global = true, env = "QND_OUT_DIR", default_value = "qnd-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Cavity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Prior {
    Uniform,
    Config,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Auto,
    Float,
    Rational,
}

impl From<Mode> for ArithmeticMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Auto => ArithmeticMode::Auto,
            Mode::Float => ArithmeticMode::Float,
            Mode::Rational => ArithmeticMode::Rational,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the kernel or model and print degeneracies and the rate table
    Validate,
    /// Run the trajectory ensemble and write traces, plot data and the report
    Simulate {
        /// Number of trajectories written as CSV traces
        #[arg(long, env = "QND_SAVE_TRAJECTORIES")]
        save_trajectories: Option<usize>,
    },
    /// Enumerate the outcome tree and check the martingale identity exactly
    Enumerate {
        /// Number of measurement steps to expand
        #[arg(long, env = "QND_DEPTH")]
        depth: Option<usize>,
        /// Arithmetic; auto picks rational when every entry is exact
        #[arg(long, env = "QND_MODE", value_enum)]
        mode: Option<Mode>,
        /// Refuse trees with more paths than this
        #[arg(long, env = "QND_PATH_CAP")]
        path_cap: Option<u64>,
        /// Pointer label for the event `q_n(α) ≥ ε`
        #[arg(long)]
        event_pointer: Option<String>,
        /// Threshold ε, as a decimal or `a/b`
        #[arg(long, requires = "event_pointer")]
        event_threshold: Option<String>,
    },
    /// Write relative entropies and Chernoff exponents for every pointer pair
    Rates,
    /// Identify the pointer from recorded outcome CSVs and reconstruct q0
    Identify {
        /// One outcome CSV per run
        #[arg(long, required = true, num_args = 1..)]
        outcomes: Vec<PathBuf>,
        /// Prior used for the posterior replay
        #[arg(long, env = "QND_PRIOR", value_enum, default_value = "uniform")]
        prior: Prior,
    },
}

#[derive(Debug)]
pub enum Failure {
    Invalid(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Invalid(m) => write!(f, "invalid input: {m}"),
            Failure::Runtime(m) => write!(f, "runtime failure: {m}"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
