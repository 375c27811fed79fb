use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use log::info;

use fsbed_cli::commands;
use fsbed_cli::config::{keys_help, ConfigError, RunConfig};

/// Few-shot bioacoustic event detection.
#[derive(Debug, Parser)]
#[command(name = "fsbed", version)]
struct Cli {
    /// `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Worker threads for per-file work.
    #[arg(long, default_value_t = 1, global = true)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract and cache features for every WAV under a directory or manifest.
    Featurize {
        input: PathBuf,
        out: PathBuf,
    },
    /// Episodic training on annotated files.
    Train {
        /// Directory or manifest CSV of training audio.
        #[arg(long)]
        data: PathBuf,
        /// Parameter file to write.
        #[arg(long)]
        out: PathBuf,
        /// Feature cache directory written by `featurize`.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Per-episode loss CSV.
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
    /// Detect events after the first POS events of each file.
    Infer {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Detection CSV to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Same as `--set infer.finetune_sed=true`.
        #[arg(long)]
        finetune_sed: bool,
        /// Same as `--set infer.finetune_sfbc=true`.
        #[arg(long)]
        finetune_sfbc: bool,
    },
    /// Score a detection CSV against reference annotations.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report CSV to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic tone/chirp corpus under `out/train` and `out/val`.
    Synth {
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.set.clone();
    if let Command::Infer { finetune_sed, finetune_sfbc, .. } = &cli.command {
        if *finetune_sed {
            overrides.push("infer.finetune_sed=true".into());
        }
        if *finetune_sfbc {
            overrides.push("infer.finetune_sfbc=true".into());
        }
    }
    let cfg = RunConfig::load(cli.config.as_deref(), std::env::vars(), &overrides)?;
    match cli.command {
        Command::Featurize { input, out } => {
            let s = commands::featurize(&input, &out, &cfg, cli.jobs)?;
            info!("{} written, {} up to date", s.written, s.skipped);
        }
        Command::Train { data, out, features, loss_log } => {
            commands::cmd_train(&data, &out, features.as_deref(), loss_log.as_deref(), &cfg, cli.jobs)?;
        }
        Command::Infer { params, data, out, features, .. } => {
            let d = commands::cmd_infer(&params, &data, &out, features.as_deref(), &cfg, cli.jobs)?;
            info!("{} detections written to {}", d.len(), out.display());
        }
        Command::Evaluate { pred, data, out } => {
            let report = commands::cmd_evaluate(&pred, &data, out.as_deref(), &cfg)?;
            print!("{}", report.table());
        }
        Command::Synth { out } => {
            let n = commands::cmd_synth(&out, &cfg)?;
            info!("{n} files written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let help = keys_help();
    let cmd = Cli::command()
        .after_long_help(help.clone())
        .mut_subcommands(|s| s.after_long_help(help.clone()));
    let cli = match cmd.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
