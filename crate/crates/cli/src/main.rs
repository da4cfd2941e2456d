use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mbp_lri::spatial::Boundary;
use mbp_lri::{PotentialSpec, SchemeKind};

mod commands;

/// Low-regularity exponential integrators for Allen-Cahn type equations.
#[derive(Debug, Parser)]
#[command(name = "mbp-lri", version, about)]
struct Cli {
    /// Worker threads for parallel sweeps (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the maximum-bound constants and step ceilings of a potential.
    Bounds(BoundsArgs),
    /// Compare the fast propagator against dense matrix exponentials.
    CheckOperator(CheckArgs),
    /// Temporal convergence study on the traveling-wave problem.
    Converge(ConvergeArgs),
    /// Coarsening dynamics from seeded random data.
    Coarsen(CoarsenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PotentialKind {
    DoubleWell,
    FloryHuggins,
}

#[derive(Debug, Args)]
struct PotentialArgs {
    #[arg(long, value_enum)]
    potential: Option<PotentialKind>,
    /// Flory-Huggins temperature (default 0.8).
    #[arg(long)]
    theta: Option<f64>,
    /// Flory-Huggins critical temperature (default 1.6).
    #[arg(long = "theta-c")]
    theta_c: Option<f64>,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[command(flatten)]
    potential: PotentialArgs,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// Nodes per axis (at most 32).
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = Boundary::Neumann)]
    bc: Boundary,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    /// Propagation times to check.
    #[arg(long = "t", value_delimiter = ',', default_values_t = [0.01, 0.3, 2.0])]
    times: Vec<f64>,
    /// Random probe vectors for the phi checks.
    #[arg(long, default_value_t = 3)]
    probes: usize,
}

#[derive(Debug, Args)]
struct ConvergeArgs {
    /// JSON configuration; flags given alongside override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    eps: Option<f64>,
    /// Mesh size is 1/h-denom.
    #[arg(long = "h-denom", conflicts_with = "full_scale")]
    h_denom: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<SchemeKind>>,
    /// Step sizes as divisors of the final time T.
    #[arg(long = "dt-divisors", value_delimiter = ',')]
    dt_divisors: Option<Vec<u32>>,
    /// Use the reference mesh h = 1/2048 (slow).
    #[arg(long = "full-scale")]
    full_scale: bool,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long = "dump-config")]
    dump_config: bool,
}

#[derive(Debug, Args)]
struct CoarsenArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    potential: PotentialArgs,
    #[arg(long)]
    scheme: Option<SchemeKind>,
    #[arg(long)]
    dt: Option<f64>,
    /// Final time.
    #[arg(long = "T", alias = "t-final")]
    t_final: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// Nodes per axis of the periodic unit square.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Initial data range as `lo,hi`.
    #[arg(long = "init-range", value_delimiter = ',', num_args = 2, allow_negative_numbers = true)]
    init_range: Option<Vec<f64>>,
    #[arg(long = "snapshot-times", value_delimiter = ',')]
    snapshot_times: Option<Vec<f64>>,
    #[arg(long = "mbp-tol")]
    mbp_tol: Option<f64>,
    #[arg(long = "out-dir", required_unless_present = "dump_config")]
    out_dir: Option<PathBuf>,
    #[arg(long = "dump-config")]
    dump_config: bool,
}

/// How a command failed, mapped onto the exit-code contract.
#[derive(Debug)]
enum Failure {
    /// Bad flags, configuration or paths: exit 2.
    Usage(anyhow::Error),
    /// A check or computation failed: exit 1.
    Verification(anyhow::Error),
}

impl Failure {
    fn usage(msg: impl std::fmt::Display) -> Self {
        Failure::Usage(anyhow::anyhow!("{msg}"))
    }
}

/// Successful command outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Clean,
    /// A check ran to completion but breached its tolerance.
    CheckFailed,
    /// The dynamics diverged or broke the maximum bound.
    Anomaly,
}

fn resolve_potential(args: &PotentialArgs, fallback: PotentialKind) -> Result<PotentialSpec, Failure> {
    match args.potential.unwrap_or(fallback) {
        PotentialKind::DoubleWell => {
            if args.theta.is_some() || args.theta_c.is_some() {
                return Err(Failure::usage("--theta and --theta-c only apply to flory-huggins"));
            }
            Ok(PotentialSpec::DoubleWell)
        }
        PotentialKind::FloryHuggins => {
            Ok(PotentialSpec::FloryHuggins { theta: args.theta.unwrap_or(0.8), theta_c: args.theta_c.unwrap_or(1.6) })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Bounds(a) => commands::bounds(a),
        Command::CheckOperator(a) => commands::check_operator(a),
        Command::Converge(a) => commands::converge(a),
        Command::Coarsen(a) => commands::coarsen(a),
    };
    match result {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Ok(Outcome::Anomaly) => ExitCode::from(3),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Verification(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
