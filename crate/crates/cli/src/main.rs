//! `maas` — command-line front end for the slot-based mobility-resource
//! auction engine.
//!
//! Subcommands:
//!
//! - `gen`      generate a seeded demand scenario and write it as JSON;
//! - `simulate` run one rolling-horizon configuration over a scenario;
//! - `oracle`   solve the offline allocation problem to optimality;
//! - `ratio`    compare an online run against the offline optimum;
//! - `verify`   run the self-check suites (identity, feasibility, incentives,
//!   oracle, pricing);
//! - `compare`  run the four standard configurations and tabulate them.
//!
//! Exit codes: 0 on success, 1 on runtime or verification failure, 2 on usage
//! errors. Output files default into `MAAS_OUT_DIR` (or the working
//! directory) unless `--out` is given.

mod commands;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use maas_core::bundle::BundleObjective;
use maas_core::online::{Mechanism, PaymentRule};
use maas_core::pricing::PriceKind;
use maas_core::rolling::SolverKind;

#[derive(Parser)]
#[command(
    name = "maas",
    version,
    about = "Slot-based mobility-resource auctions: generate demand, run online and offline mechanisms, and audit their guarantees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded demand scenario and write it as JSON.
    Gen(GenArgs),
    /// Run one rolling-horizon configuration over a scenario.
    Simulate(SimulateArgs),
    /// Solve the offline allocation problem to optimality.
    Oracle(OracleArgs),
    /// Run the online auction and report its competitive ratio against the
    /// offline optimum.
    Ratio(RatioArgs),
    /// Run the self-check suites; exits 1 if any suite fails.
    Verify(VerifyArgs),
    /// Run the four standard configurations over one scenario and tabulate
    /// welfare, acceptance, and runtime.
    Compare(CompareArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub(crate) enum CliMechanism {
    Payg,
    Paap,
}

impl From<CliMechanism> for Mechanism {
    fn from(m: CliMechanism) -> Self {
        match m {
            CliMechanism::Payg => Mechanism::Payg,
            CliMechanism::Paap => Mechanism::Paap,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub(crate) enum CliPrice {
    Linear,
    Quadratic,
    Exponential,
}

impl From<CliPrice> for PriceKind {
    fn from(p: CliPrice) -> Self {
        match p {
            CliPrice::Linear => PriceKind::Linear,
            CliPrice::Quadratic => PriceKind::Quadratic,
            CliPrice::Exponential => PriceKind::Exponential,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub(crate) enum CliSolver {
    /// Per-slot primal-dual auction.
    OnlineAlg,
    /// Per-slot exact solve at the posted price.
    OnlineMilp,
    /// Windowed exact welfare solve.
    OfflineMilp,
}

impl From<CliSolver> for SolverKind {
    fn from(s: CliSolver) -> Self {
        match s {
            CliSolver::OnlineAlg => SolverKind::OnlineAlgorithm,
            CliSolver::OnlineMilp => SolverKind::OnlineMilp,
            CliSolver::OfflineMilp => SolverKind::OfflineMilp,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub(crate) enum CliPayment {
    Posted,
    DualThreshold,
}

impl From<CliPayment> for PaymentRule {
    fn from(p: CliPayment) -> Self {
        match p {
            CliPayment::Posted => PaymentRule::Posted,
            CliPayment::DualThreshold => PaymentRule::DualThreshold,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub(crate) enum CliObjective {
    MinInconvenience,
    MinTotalTime,
    FeasibleOnly,
}

impl From<CliObjective> for BundleObjective {
    fn from(o: CliObjective) -> Self {
        match o {
            CliObjective::MinInconvenience => BundleObjective::MinInconvenience,
            CliObjective::MinTotalTime => BundleObjective::MinTotalTime,
            CliObjective::FeasibleOnly => BundleObjective::FeasibleOnly,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub(crate) enum CliPackageMode {
    Uniform,
    WeekSchedule,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub(crate) enum CliSuite {
    All,
    Identity,
    Feasibility,
    Ic,
    Oracle,
    Pricing,
}

#[derive(Args)]
pub(crate) struct GenArgs {
    /// Mechanism to generate demand for.
    #[arg(long, value_enum)]
    pub mechanism: CliMechanism,
    /// Number of slots; defaults to 120 (payg) or 100 (paap).
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Per-slot resource capacity; defaults to the mechanism's standard
    /// value.
    #[arg(long)]
    pub capacity: Option<f64>,
    /// Posted-price curve recorded with the scenario.
    #[arg(long, value_enum, default_value_t = CliPrice::Exponential)]
    pub price: CliPrice,
    /// Floor of the unit-price band; bids are drawn from
    /// [b_min * Q, b_max * Q].
    #[arg(long, default_value_t = 2.0)]
    pub b_min: f64,
    /// Ceiling of the unit-bid band and slope parameter of the price curve.
    #[arg(long, default_value_t = 12.0)]
    pub b_max: f64,
    /// Minimum trip (or package day) distance in km.
    #[arg(long)]
    pub distance_min: Option<f64>,
    /// Maximum trip (or package day) distance in km.
    #[arg(long)]
    pub distance_max: Option<f64>,
    /// Minimum bids per user menu.
    #[arg(long)]
    pub bids_min: Option<usize>,
    /// Maximum bids per user menu.
    #[arg(long)]
    pub bids_max: Option<usize>,
    /// Package-length rule (paap only).
    #[arg(long, value_enum)]
    pub package: Option<CliPackageMode>,
    /// Shortest package length for `--package uniform`.
    #[arg(long, default_value_t = 5)]
    pub package_min: usize,
    /// Longest package length for `--package uniform`.
    #[arg(long, default_value_t = 14)]
    pub package_max: usize,
    /// Enable flexible booking: departures fall up to this many slots after
    /// placement.
    #[arg(long)]
    pub booking_width: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path; defaults into MAAS_OUT_DIR (or the working directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub(crate) struct SimulateArgs {
    /// Scenario JSON produced by `maas gen`.
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, value_enum, default_value_t = CliSolver::OnlineAlg)]
    pub solver: CliSolver,
    /// Slots the clock advances per iteration (capped at the horizon).
    #[arg(long, default_value_t = 1)]
    pub step: usize,
    /// Lookahead window; defaults to the step.
    #[arg(long)]
    pub window: Option<usize>,
    /// Slots past the departure a booking may still be served at (windowed
    /// solvers only).
    #[arg(long, default_value_t = 0)]
    pub booking_horizon: usize,
    /// Payment rule of the online-algorithm path.
    #[arg(long, value_enum, default_value_t = CliPayment::DualThreshold)]
    pub payment: CliPayment,
    #[arg(long, value_enum, default_value_t = CliObjective::MinInconvenience)]
    pub objective: CliObjective,
    /// Branch-and-bound node budget for the exact solvers.
    #[arg(long)]
    pub node_limit: Option<usize>,
    /// Also write the run summary JSON here (stdout always gets it).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the per-iteration event log (one JSON object per line).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Write per-slot series (welfare, acceptance, price, availability) as
    /// CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args)]
pub(crate) struct OracleArgs {
    /// Scenario JSON produced by `maas gen`.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Slots past the departure a booking may be served at (0 = exactly at
    /// departure).
    #[arg(long, default_value_t = 0)]
    pub booking_horizon: usize,
    /// Solve the linear relaxation even under payg.
    #[arg(long)]
    pub relax: bool,
    /// Branch-and-bound node budget.
    #[arg(long)]
    pub node_limit: Option<usize>,
    /// Also write the report JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub(crate) struct RatioArgs {
    /// Scenario JSON produced by `maas gen`.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Also write the report JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub(crate) struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = CliSuite::All)]
    pub suite: CliSuite,
    /// Randomized trials per suite (deterministic per seed).
    #[arg(long, default_value_t = 25)]
    pub trials: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Also write the suite reports JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub(crate) struct CompareArgs {
    /// Scenario JSON produced by `maas gen`.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Step of the windowed offline configuration.
    #[arg(long, default_value_t = 10)]
    pub step: usize,
    /// Lookahead window of the rolling configurations; defaults to
    /// min(horizon, 240).
    #[arg(long)]
    pub window: Option<usize>,
    /// Branch-and-bound node budget for the exact solvers.
    #[arg(long)]
    pub node_limit: Option<usize>,
    /// Write the comparison rows as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Gen(args) => commands::gen(args),
        Command::Simulate(args) => commands::simulate(args),
        Command::Oracle(args) => commands::oracle(args),
        Command::Ratio(args) => commands::ratio(args),
        Command::Verify(args) => verify::verify(args),
        Command::Compare(args) => commands::compare(args),
    }
}
