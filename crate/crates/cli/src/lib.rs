//! Scenario runner behind the `qlinksim` executable: TOML configuration with
//! dotted-key overrides, parameter sweeps and reproducible CSV output.

pub mod config;
pub mod run;
pub mod table;

use std::path::Path;

pub use config::{parse_config, resolve, ResolvedConfig, Scenario, ScenarioConfig};
pub use run::run_scenario;
pub use table::{Cell, ResultTable};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

/// Writes `table` to `destination`, or to stdout when `None`.
pub fn emit_csv(table: &ResultTable, destination: Option<&Path>) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    match destination {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            table.write_csv(std::io::BufWriter::new(file)).map_err(io)
        }
        None => table.write_csv(std::io::stdout().lock()).map_err(io),
    }
}
