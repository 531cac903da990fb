use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qlinksim::{emit_csv, resolve, run_scenario, CliError, Scenario};

#[derive(Parser)]
#[command(
    name = "qlinksim",
    version,
    about = "Quantum-link scenarios and parameter sweeps as CSV"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML scenario file; defaults when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set herald.distance_km=20`
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Output file (default stdout)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for sweeps (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Heralding probability and fidelity of the dual-rail pair
    Herald,
    /// Optimized DI-QKD key rate for the four source/detector curves
    DiqkdRate,
    /// BB84 and SARG rates with weak coherent pulses
    WcpRate,
    /// DLCZ and single-photon-source repeater rates
    RepeaterRate,
    /// Detection efficiency needed to violate CHSH
    ChshThreshold,
}

impl From<Command> for Scenario {
    fn from(c: Command) -> Self {
        match c {
            Command::Herald => Scenario::Herald,
            Command::DiqkdRate => Scenario::DiqkdRate,
            Command::WcpRate => Scenario::WcpRate,
            Command::RepeaterRate => Scenario::RepeaterRate,
            Command::ChshThreshold => Scenario::ChshThreshold,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let text = match &cli.config {
        Some(path) => {
            std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => String::new(),
    };
    let resolved = resolve(&text, &cli.overrides, cli.command.into())?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build().map_err(|e| CliError::Io(e.to_string()))?;
    let table = pool.install(|| run_scenario(&resolved))?;
    emit_csv(&table, cli.out.as_deref())?;
    if let Some(path) = &cli.out {
        eprint!("{}", table.summary());
        eprintln!("wrote {} rows to {}", table.rows.len(), path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QLINKSIM_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qlinksim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
