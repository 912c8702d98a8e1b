//! Front end tying locking, sweeps, attacks, and characterization into
//! reproducible file-based workflows.
//!
//! Exit codes are stable: 0 ok, 2 configuration error, 3 keyspace too
//! large, 4 unknown/failed attack setup, 5 malformed table, 1 internal.

mod archive;
mod commands;
mod manifest;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ldelock", version, about = "Analog netlist locking workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// RNG seed; required wherever randomness is consumed (no wall-clock
    /// default, every run is reproducible).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for keyspace evaluation (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build a locked design from a netlist and a lock configuration.
    Lock {
        netlist: PathBuf,
        config: PathBuf,
        /// Redraw decoys that pruning would condemn instead of dropping
        /// them, preserving the requested group sizes.
        #[arg(long)]
        refine: bool,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Evaluate keys of a locked archive and emit CSV plus a summary.
    Sweep {
        archive: PathBuf,
        sweep_config: PathBuf,
        /// Secret key file; enables CORRECT_BY_CONSTRUCTION labeling.
        #[arg(long)]
        secret: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Mount an attack against a locked archive with an oracle built from
    /// the secret key.
    Attack {
        archive: PathBuf,
        secret: PathBuf,
        /// One of: brute_force, divide_and_conquer, removal, naive_guess,
        /// lde_blind.
        #[arg(long)]
        attack: String,
        /// Query budget (brute_force).
        #[arg(long)]
        budget: Option<u64>,
        /// Key order for brute force: canonical or random.
        #[arg(long, default_value = "canonical")]
        order: String,
        /// Target transistors, comma separated (divide_and_conquer).
        #[arg(long)]
        target: Option<String>,
        /// Public gm target in siemens (divide_and_conquer).
        #[arg(long)]
        gm_target: Option<f64>,
        /// Relative gm tolerance (divide_and_conquer).
        #[arg(long, default_value_t = 0.02)]
        tolerance: f64,
        /// Guess patterns, comma separated: all-bl, all-sp, all-sod
        /// (naive_guess).
        #[arg(long)]
        guess: Option<String>,
        /// Keys to evaluate in layout-blind mode (lde_blind).
        #[arg(long)]
        max_keys: Option<u128>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Dump a shift table and Monte Carlo statistics.
    Characterize {
        table: PathBuf,
        /// Monte Carlo draws per table entry (0 disables the section).
        #[arg(long, default_value_t = 0)]
        mc: u64,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Simulate one configuration and print its metrics.
    Simulate {
        netlist: Option<PathBuf>,
        /// Apply the designer arrangements of a lock configuration.
        #[arg(long)]
        lock_config: Option<PathBuf>,
        /// Locked archive (alternative to a plain netlist).
        #[arg(long)]
        archive: Option<PathBuf>,
        /// Key as dash-joined group-local couple indices.
        #[arg(long)]
        key: Option<String>,
        #[command(flatten)]
        common: CommonOpts,
    },
}

/// Error carrying its process exit code.
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> CliError {
        CliError {
            code: 2,
            message: msg.into(),
        }
    }
    pub fn scale(msg: impl Into<String>) -> CliError {
        CliError {
            code: 3,
            message: msg.into(),
        }
    }
    pub fn attack(msg: impl Into<String>) -> CliError {
        CliError {
            code: 4,
            message: msg.into(),
        }
    }
    pub fn table(msg: impl Into<String>) -> CliError {
        CliError {
            code: 5,
            message: msg.into(),
        }
    }
    pub fn internal(msg: impl Into<String>) -> CliError {
        CliError {
            code: 1,
            message: msg.into(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::internal(format!("i/o error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Lock {
            netlist,
            config,
            refine,
            common,
        } => commands::cmd_lock(&netlist, &config, refine, &common),
        Command::Sweep {
            archive,
            sweep_config,
            secret,
            common,
        } => commands::cmd_sweep(&archive, &sweep_config, secret.as_deref(), &common),
        Command::Attack {
            archive,
            secret,
            attack,
            budget,
            order,
            target,
            gm_target,
            tolerance,
            guess,
            max_keys,
            common,
        } => commands::cmd_attack(commands::AttackArgs {
            archive: &archive,
            secret: &secret,
            attack: &attack,
            budget,
            order: &order,
            target: target.as_deref(),
            gm_target,
            tolerance,
            guess: guess.as_deref(),
            max_keys,
            common: &common,
        }),
        Command::Characterize { table, mc, common } => {
            commands::cmd_characterize(&table, mc, &common)
        }
        Command::Simulate {
            netlist,
            lock_config,
            archive,
            key,
            common,
        } => commands::cmd_simulate(
            netlist.as_deref(),
            lock_config.as_deref(),
            archive.as_deref(),
            key.as_deref(),
            &common,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
