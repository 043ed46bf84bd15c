//! `anoca`: network validation, power flow, home energy scheduling,
//! curtailment and closed-loop simulation from the command line.
//!
//! Exit status is 0 on success, 1 for invalid input or a solver that gave
//! up, 2 for I/O and usage errors and 3 when a problem is infeasible.

mod commands;
mod error;
mod inputs;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anoca::dms::CurtailmentStrategy;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "anoca", version, about = "Prosumer export curtailment on unbalanced distribution networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a network file and list every problem found.
    Validate {
        path: PathBuf,
    },
    /// Solve the three-phase power flow.
    Powerflow(PowerflowArgs),
    /// Schedule one home battery over a forecast horizon.
    Hems(HemsArgs),
    /// Curtail prosumer exports until every network bound holds.
    Dms(DmsArgs),
    /// Run the receding-horizon loop over several steps.
    Simulate(SimulateArgs),
    /// Write the built-in networks, scenarios and simulation configs.
    Fixture(FixtureArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Strategy {
    L1,
    L2,
    Linf,
}

impl From<Strategy> for CurtailmentStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::L1 => CurtailmentStrategy::L1,
            Strategy::L2 => CurtailmentStrategy::L2,
            Strategy::Linf => CurtailmentStrategy::Linf,
        }
    }
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("{v} is not a positive number")),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Args)]
pub struct PowerflowArgs {
    #[arg(long)]
    pub network: PathBuf,
    /// `bus,phase,p_kw,q_kvar` net consumption; defaults to the network's loads.
    #[arg(long)]
    pub injections: Option<PathBuf>,
    /// Convergence tolerance on the per-unit current mismatch.
    #[arg(long, default_value_t = 1e-8, value_parser = positive)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Args)]
pub struct HemsArgs {
    /// `tau,p_load_kw,p_pv_kw,c_import,c_export` rows.
    #[arg(long)]
    pub forecast: PathBuf,
    #[arg(long, default_value_t = 5.0, value_parser = positive)]
    pub dt_minutes: f64,
    /// Battery parameters as JSON or TOML.
    #[arg(long, conflicts_with_all = ["network", "prosumer"], required_unless_present = "prosumer")]
    pub battery: Option<PathBuf>,
    /// Take the battery of `--prosumer` from this network.
    #[arg(long, requires = "prosumer")]
    pub network: Option<PathBuf>,
    #[arg(long, requires = "network")]
    pub prosumer: Option<String>,
    /// Defaults to the battery's boundary SOC.
    #[arg(long)]
    pub initial_soc: Option<f64>,
    /// Leave the final SOC free instead of returning to the boundary value.
    #[arg(long)]
    pub free_terminal: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Args)]
pub struct DmsArgs {
    #[arg(long)]
    pub network: PathBuf,
    /// Offers as a JSON array or `bus,phase,oes_kw,ois_kw` CSV.
    #[arg(long, required_unless_present = "scenario", conflicts_with = "scenario")]
    pub setpoints: Option<PathBuf>,
    /// Derive offers from the base loads and a scenario file.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Strategy::L1)]
    pub strategy: Strategy,
    /// Hold transformer taps at their default position.
    #[arg(long)]
    pub fixed_taps: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Simulation config as TOML or JSON. Paths inside it are relative to it.
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub strategy: Option<Strategy>,
    /// Forecast noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of executed steps.
    #[arg(long)]
    pub span: Option<usize>,
    /// Cap on concurrent home schedulers.
    #[arg(long, env = "ANOCA_THREADS")]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct FixtureArgs {
    /// Fixture names; all of them when omitted.
    pub names: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { path } => commands::validate(&path),
        Command::Powerflow(a) => commands::powerflow(&a),
        Command::Hems(a) => commands::hems(&a),
        Command::Dms(a) => commands::dms(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Fixture(a) => commands::fixture(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
