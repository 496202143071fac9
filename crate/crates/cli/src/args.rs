use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Debug, Clone, Parser)]
#[command(name = "fracstab", version, about = "Fractional-noise stability experiments")]
pub struct Cli {
    /// TOML experiment configuration; the built-in default when omitted.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,

    /// Override a configuration value, e.g. `--set model.nu=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    /// Output root; takes precedence over FRACSTAB_OUTPUT_DIR and the config.
    #[arg(short, long, global = true)]
    pub out: Option<PathBuf>,

    /// Master seed (same as `--set noise.master_seed=...`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Check every validator and print one line per check.
    Validate,
    /// Sample one scalar fBm path.
    Fbm,
    /// Simulate the O-U processes of both noise components.
    Ou,
    /// Solve for the stationary state and report the structural constants.
    Stationary,
    /// One pathwise run with its diagnostics.
    Simulate {
        /// Also evaluate the a-posteriori integrated residual.
        #[arg(long)]
        residual: bool,
    },
    /// Ensemble stability experiment; exit code 3 when a seed fails its check.
    Stability {
        #[arg(long)]
        ensemble: Option<usize>,
    },
    /// Uniform energy probe over the configured horizons for every seed.
    Energy {
        #[arg(long)]
        ensemble: Option<usize>,
    },
    /// Repeat the ensemble diagnostics over values of one parameter.
    Sweep {
        /// One of H, alpha, beta, nu, rho, M.
        param: String,
        /// Comma-separated values.
        values: String,
        #[arg(long)]
        ensemble: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Fbm => "fbm",
            Command::Ou => "ou",
            Command::Stationary => "stationary",
            Command::Simulate { .. } => "simulate",
            Command::Stability { .. } => "stability",
            Command::Energy { .. } => "energy",
            Command::Sweep { .. } => "sweep",
        }
    }
}
