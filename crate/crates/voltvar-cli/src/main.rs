//! Command-line front end for the voltvar pipeline.
//!
//! Exit codes are stable for scripting: 0 success, 2 validation or parse
//! failure, 3 infeasible dispatch or diverged loop, 4 requested step size
//! outside the stability certificate.

use std::path::PathBuf;
use std::process;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;

#[derive(Parser)]
#[command(
    name = "voltvar",
    version,
    about = "Local Volt/Var control: scenario labeling, curve fitting, stability certificates, closed-loop replay"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label load scenarios with optimal dispatches; one training CSV per DER
    BuildDataset(BuildDatasetArgs),
    /// Fit one monotone control curve per DER from labeled datasets
    Train(TrainArgs),
    /// Certify the loop: sensitivity norm, slope bound, largest stable step
    Stability(StabilityArgs),
    /// Replay a profile (or hold one operating point) through the control loop
    Simulate(SimulateArgs),
    /// Solve one reactive dispatch and print the certified solution
    Opf(OpfArgs),
    /// Export a bundled feeder, and its synthetic day where one is defined
    Fixture(FixtureArgs),
}

#[derive(Args)]
pub struct BuildDatasetArgs {
    /// Feeder description JSON
    #[arg(long)]
    pub network: PathBuf,
    /// Load profile CSV supplying the base operating points
    #[arg(long)]
    pub profiles: PathBuf,
    /// Number of scenarios to label
    #[arg(long, default_value_t = 200)]
    pub scenarios: usize,
    /// Relative load perturbation around the base points, in [0, 1)
    #[arg(long, default_value_t = 0.05)]
    pub perturbation: f64,
    /// Keep every n-th profile row as a base point
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for dataset CSVs and the run manifest
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Directory holding dataset_bus*.csv files
    #[arg(long)]
    pub datasets: PathBuf,
    /// Feeder description JSON; DER reactive limits become output budgets
    #[arg(long)]
    pub network: PathBuf,
    /// Hidden units per curve
    #[arg(long, default_value_t = 200)]
    pub hidden: usize,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    /// Base seed; DER j trains with seed + j
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for curve JSONs and the run manifest
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct StabilityArgs {
    /// Feeder description JSON
    #[arg(long)]
    pub network: PathBuf,
    /// Directory holding curve_bus*.json files
    #[arg(long)]
    pub models: PathBuf,
    /// Step size to judge against the certificate
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Optional output directory for the report and manifest
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Move each set point a fraction epsilon toward its curve
    Incremental,
    /// Jump straight onto the curve every iteration
    NonIncremental,
    /// Freeze set points at zero
    Uncontrolled,
    /// Run incremental and uncontrolled, emit a comparison file
    Paired,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum FeedbackArg {
    /// Sensitivity model voltages
    Linear,
    /// Nonlinear fixed-point grid solve
    Zbus,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Feeder description JSON
    #[arg(long)]
    pub network: PathBuf,
    /// Directory holding curve_bus*.json files; not needed when uncontrolled
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// Load profile CSV to replay
    #[arg(long)]
    pub profiles: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Incremental)]
    pub mode: ModeArg,
    /// Step size for the incremental law
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value_t = FeedbackArg::Zbus)]
    pub feedback: FeedbackArg,
    /// First minute of the replay window (inclusive)
    #[arg(long)]
    pub window_start: Option<f64>,
    /// End minute of the replay window (exclusive)
    #[arg(long)]
    pub window_end: Option<f64>,
    /// Control iterations per profile row
    #[arg(long, default_value_t = 120)]
    pub iters_per_step: usize,
    /// Hold one operating point and iterate until the set points settle
    #[arg(long)]
    pub fixed_load: bool,
    /// Minute of the operating point for --fixed-load; first row by default
    #[arg(long)]
    pub minute: Option<f64>,
    /// Iteration budget for --fixed-load
    #[arg(long, default_value_t = 600)]
    pub iters: usize,
    /// Convergence threshold on the set-point update
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Keep every iteration in the trace, not just each row's last state
    #[arg(long)]
    pub record_iterations: bool,
    /// Output directory for traces, metrics and the run manifest
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct OpfArgs {
    /// Feeder description JSON
    #[arg(long)]
    pub network: PathBuf,
    /// Load profile CSV; the operating point comes from one of its rows
    #[arg(long)]
    pub profiles: PathBuf,
    /// Minute of the operating point; first row by default
    #[arg(long)]
    pub minute: Option<f64>,
    /// Certificate tolerance on the KKT residuals
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Optional output directory for the solution and manifest
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum FixtureArg {
    /// 36 interior buses, five DERs, bundled synthetic day
    Feeder37,
    /// Six interior buses, two DERs
    SixBus,
    /// One line, one DER
    TwoBus,
}

#[derive(Args)]
pub struct FixtureArgs {
    #[arg(long, value_enum, default_value_t = FixtureArg::Feeder37)]
    pub name: FixtureArg,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<voltvar::Error>() {
        Some(voltvar::Error::Infeasible(_)) | Some(voltvar::Error::NoConvergence { .. }) => 3,
        _ => 2,
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildDataset(args) => commands::build_dataset(args),
        Command::Train(args) => commands::train(args),
        Command::Stability(args) => commands::stability(args),
        Command::Simulate(args) => commands::simulate(args),
        Command::Opf(args) => commands::opf(args),
        Command::Fixture(args) => commands::fixture(args),
    };
    match result {
        Ok(code) => process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            process::exit(exit_code(&err));
        }
    }
}
