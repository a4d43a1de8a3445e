//! `motenv`: envelope solver, strategy extraction and Monte Carlo
//! verification for atomic-measure martingale transport with stopping.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{EXIT_SCHEMA, EXIT_SOLVER};
use config::{MethodChoice, RunConfig};

#[derive(Parser)]
#[command(name = "motenv", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Default, Args)]
struct Overrides {
    /// Grid resolution override.
    #[arg(long)]
    m: Option<usize>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo path count override.
    #[arg(long)]
    n_paths: Option<u64>,
    /// Solver method override.
    #[arg(long, value_enum)]
    method: Option<MethodChoice>,
    /// Output directory override.
    #[arg(long)]
    out_dir: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the envelope on every face and export grids.
    Solve {
        /// JSON run configuration.
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the extracted optimal policy by Monte Carlo.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Dump the first N paths as a step-level CSV trace.
        #[arg(long, default_value_t = 0)]
        trace: u64,
    },
    /// Cross-check hull, obstacle, closed form and Monte Carlo.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Closed-form call-spread value and strategy on atoms {-1, 0, 1}.
    Oracle {
        #[arg(long, allow_hyphen_values = true)]
        k1: f64,
        #[arg(long, allow_hyphen_values = true)]
        k2: f64,
        #[arg(long, allow_hyphen_values = true)]
        beta: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        gamma: Option<f64>,
        /// Emit the whole (beta, gamma) surface at this resolution instead.
        #[arg(long)]
        grid: Option<usize>,
        /// CSV output path for the surface.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &PathBuf) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn out_dir(resolved: &config::Resolved) -> PathBuf {
    PathBuf::from(
        resolved
            .config
            .output_dir
            .clone()
            .unwrap_or_else(|| "out".to_string()),
    )
}

fn run() -> anyhow::Result<i32> {
    let cli = Cli::parse();
    match cli.command {
        Command::Solve { config, overrides } => {
            let cfg = load_config(&config).map_err(schema_err)?;
            let res = config::resolve(cfg, &overrides).map_err(schema_err)?;
            commands::cmd_solve(&res, &out_dir(&res)).map_err(solver_err)
        }
        Command::Simulate {
            config,
            overrides,
            trace,
        } => {
            let cfg = load_config(&config).map_err(schema_err)?;
            let res = config::resolve(cfg, &overrides).map_err(schema_err)?;
            commands::cmd_simulate(&res, &out_dir(&res), trace).map_err(solver_err)
        }
        Command::Compare { config, overrides } => {
            let cfg = load_config(&config).map_err(schema_err)?;
            let res = config::resolve(cfg, &overrides).map_err(schema_err)?;
            commands::cmd_compare(&res, &out_dir(&res)).map_err(solver_err)
        }
        Command::Oracle {
            k1,
            k2,
            beta,
            gamma,
            grid,
            out,
        } => commands::cmd_oracle(k1, k2, beta, gamma, grid, out),
    }
}

/// Tags an error with the schema exit code.
fn schema_err(e: anyhow::Error) -> anyhow::Error {
    e.context(ExitTag(EXIT_SCHEMA))
}

/// Tags solver-stage errors (non-convergence and friends).
fn solver_err(e: anyhow::Error) -> anyhow::Error {
    if e.downcast_ref::<ExitTag>().is_some() {
        e
    } else {
        e.context(ExitTag(EXIT_SOLVER))
    }
}

#[derive(Debug, Clone, Copy)]
struct ExitTag(i32);

impl std::fmt::Display for ExitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exit code {}", self.0)
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            let code = e
                .downcast_ref::<ExitTag>()
                .map(|t| t.0)
                .unwrap_or(EXIT_SOLVER);
            eprintln!("error: {e:#}");
            ExitCode::from(code as u8)
        }
    }
}
