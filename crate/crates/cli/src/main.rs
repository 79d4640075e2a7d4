use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "stare", version, about = "Hyper-relational link prediction with StarE")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(short, long)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output.dir`.
    #[arg(long, env = "STARE_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,

    /// `key=value` overrides applied after the config file.
    overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Literal and rarity filtering, splitting, leakage and unseen-entity removal.
    Clean,
    /// Resample each split to `preprocess.ratio` qualified statements.
    Ratio,
    /// Keep at most `preprocess.truncate` qualifiers per statement.
    Truncate,
    /// Drop all qualifiers and deduplicate main triples.
    Triples,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Valid,
    Test,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write cleaned or derived dataset splits.
    Preprocess {
        #[arg(long, value_enum)]
        mode: Mode,
        #[command(flatten)]
        common: Common,
    },
    /// Report dataset statistics.
    Stats {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write checkpoints and a loss log.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Rank a split with a trained checkpoint.
    Evaluate {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        #[command(flatten)]
        common: Common,
    },
    /// Compare analytic and finite-difference gradients on one batch.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<RunConfig, ConfigError> {
    let mut config = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(dir) = &common.output_dir {
        config.output_dir = dir.clone();
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Preprocess { common, .. }
        | Command::Stats { common }
        | Command::Train { common }
        | Command::Evaluate { common, .. }
        | Command::Gradcheck { common } => common,
    };
    let config = match load(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Preprocess { mode, .. } => commands::preprocess(&config, mode),
        Command::Stats { .. } => commands::stats(&config),
        Command::Train { .. } => commands::train(&config),
        Command::Evaluate { split, .. } => commands::evaluate(&config, split),
        Command::Gradcheck { .. } => commands::gradcheck(&config),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
