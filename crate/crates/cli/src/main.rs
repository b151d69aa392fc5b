mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use delta_core::numerics::Faults;

use crate::commands::Split;
use crate::config::RunConfig;

/// Error caused by bad flags or configuration; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "delta", version, about = "Train and evaluate DELTA click-through-rate models")]
struct Cli {
    /// Print the run configuration (defaults, or the one given with --config) and exit.
    #[arg(long, global = true)]
    dump_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode a delimited text file with a `label` column into a dataset cache.
    Prep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Tokens seen fewer times in the training rows map to the shared OOV index.
        #[arg(long, default_value_t = 2)]
        min_freq: usize,
        /// Columns to treat as numeric and bucketise.
        #[arg(long, value_delimiter = ',')]
        numeric: Vec<String>,
        #[arg(long, default_value_t = 2024)]
        split_seed: u64,
    },
    /// Train one model; writes the history table and best checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on one split of a dataset cache.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
    },
    /// Train several variants on shared seeds and compare test metrics.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated variant names.
        #[arg(long)]
        variants: String,
        /// Number of consecutive seeds starting at the config seed.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
    /// Compare every gradient with central finite differences.
    Gradcheck {
        /// Test fixture: corrupt the fusion-gate gradient.
        #[arg(long, hide = true)]
        inject_gate_fault: bool,
    },
}

/// `DELTA_DETERMINISTIC` accepts `0` or `1`. Execution is always
/// single-threaded, so both settings give bit-identical runs.
fn check_deterministic_env() -> Result<()> {
    match std::env::var("DELTA_DETERMINISTIC") {
        Ok(v) if !matches!(v.as_str(), "0" | "1" | "") => {
            bail!(UsageError(format!("DELTA_DETERMINISTIC must be 0 or 1, got `{v}`")))
        }
        _ => Ok(()),
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    check_deterministic_env()?;
    if cli.dump_config {
        let cfg = match &cli.command {
            Some(Command::Train { config, seed }) => {
                let mut cfg = load_config(config.as_ref())?;
                cfg.seed = seed.unwrap_or(cfg.seed);
                cfg
            }
            Some(Command::Ablate { config, .. }) => load_config(config.as_ref())?,
            _ => RunConfig::default(),
        };
        println!("{}", cfg.to_json()?);
        return Ok(ExitCode::SUCCESS);
    }
    let Some(command) = cli.command else {
        bail!(UsageError("no subcommand given; see --help".into()));
    };
    match command {
        Command::Prep {
            input,
            output,
            min_freq,
            numeric,
            split_seed,
        } => {
            if min_freq == 0 {
                bail!(UsageError("--min-freq must be at least 1".into()));
            }
            commands::prep(&input, &output, min_freq, &numeric, split_seed)?;
        }
        Command::Train { config, seed } => {
            let mut cfg = load_config(config.as_ref())?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            commands::train(&cfg)?;
        }
        Command::Eval {
            checkpoint,
            data,
            split,
        } => commands::eval(&checkpoint, &data, split)?,
        Command::Ablate {
            config,
            variants,
            seeds,
        } => {
            let variants = commands::parse_variants(&variants)?;
            let cfg = load_config(config.as_ref())?;
            commands::ablate(&cfg, &variants, seeds)?;
        }
        Command::Gradcheck { inject_gate_fault } => {
            let faults = Faults {
                flip_gate_grad: inject_gate_fault,
            };
            if !commands::gradcheck(faults)? {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<UsageError>()) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
