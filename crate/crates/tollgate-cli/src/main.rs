//! Command-line front end: validate scenarios, design tolls, simulate and compare.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "tollgate",
    version,
    about = "Design integer token tolls and verify them by simulation"
)]
struct Cli {
    /// Root directory for outputs; each scenario writes under `<out>/<scenario name>/`.
    #[arg(
        long,
        global = true,
        env = "TOLLGATE_OUT",
        default_value = "tollgate-out"
    )]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a scenario against the model assumptions.
    Validate { scenario: PathBuf },
    /// Compute the system optimum and the integer toll map, with all certificates.
    Design { scenario: PathBuf },
    /// Simulate the designed tolls (or the zero-toll baseline).
    Simulate(SimulateArgs),
    /// Distance between finite-population runs and the mean field for several population sizes.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Meanfield,
    Population,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    scenario: PathBuf,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Design result to simulate; defaults to `<out>/<scenario>/design.json`.
    #[arg(long)]
    design: Option<PathBuf>,
    /// Also simulate zero tolls under the same horizon and seeds (alone when no design exists).
    #[arg(long)]
    baseline_zero_tolls: bool,
    /// Population seeds, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Number of agents in population mode.
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Number of sample intervals over the horizon.
    #[arg(long)]
    samples: Option<usize>,
    /// Start the mean field from a random interior point with this seed instead of the uniform mix.
    #[arg(long)]
    random_start: Option<u64>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    scenario: PathBuf,
    #[arg(long)]
    design: Option<PathBuf>,
    /// Population sizes, e.g. `100,1000,10000`.
    #[arg(long, value_delimiter = ',', default_values_t = vec![100, 1000, 10000])]
    agents: Vec<usize>,
    #[arg(long, default_value_t = 200.0)]
    horizon: f64,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { scenario } => commands::validate(&scenario),
        Command::Design { scenario } => commands::design(&scenario, &cli.out),
        Command::Simulate(args) => commands::simulate(&args.into(), &cli.out),
        Command::Compare(args) => commands::compare(&args.into(), &cli.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}

impl From<SimulateArgs> for commands::SimulateOptions {
    fn from(a: SimulateArgs) -> Self {
        commands::SimulateOptions {
            scenario: a.scenario,
            population: a.mode == Mode::Population,
            design: a.design,
            baseline: a.baseline_zero_tolls,
            seeds: a.seeds,
            agents: a.agents,
            horizon: a.horizon,
            samples: a.samples,
            random_start: a.random_start,
        }
    }
}

impl From<CompareArgs> for commands::CompareOptions {
    fn from(a: CompareArgs) -> Self {
        commands::CompareOptions {
            scenario: a.scenario,
            design: a.design,
            agents: a.agents,
            horizon: a.horizon,
            samples: a.samples,
            seed: a.seed,
        }
    }
}
