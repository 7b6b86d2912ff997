use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use textrec_cli::commands;
use textrec_cli::config::ExperimentConfig;
use textrec_cli::error::{CliError, Result};

#[derive(Parser)]
#[command(name = "textrec", version, about = "Text-enriched CTR experiments on MovieLens-1M")]
struct Cli {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Sequential execution for bit-reproducible runs.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, label and split the dataset.
    Prepare,
    /// Dump verbalized users, items and contexts as TSV.
    Verbalize {
        /// Template version from the template file.
        #[arg(long)]
        template: Option<String>,
        /// Write users.tsv, items.tsv and contexts.tsv here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fill the embedding cache for every distinct text.
    Embed,
    /// Train one model and write a run directory.
    Train,
    /// Re-score the test split with a finished run.
    Eval {
        /// Attempt directory; defaults to the latest attempt of the config's run.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Comparison table over run manifests.
    Report {
        /// Manifests, attempt directories or run roots; defaults to the runs directory.
        paths: Vec<PathBuf>,
        /// Also write report.md and report.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_env(|k| std::env::var(k).ok());
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if cli.deterministic {
        cfg.train.deterministic = true;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Prepare => commands::prepare(&cfg, &mut out),
        Command::Verbalize { template, out: dir } => {
            commands::verbalize(&cfg, template.as_deref(), dir.as_deref(), &mut out)
        }
        Command::Embed => commands::embed(&cfg, &mut out).map(drop),
        Command::Train => commands::train(&cfg, &mut out, &mut std::io::stderr()).map(drop),
        Command::Eval { run } => commands::eval(&cfg, run.as_deref(), &mut out).map(drop),
        Command::Report { paths, out: dir } => {
            let paths = if paths.is_empty() {
                vec![cfg.data.runs_dir.clone()]
            } else {
                paths
            };
            commands::report(&paths, dir.as_deref(), &mut out).map(drop)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &CliError) -> ExitCode {
    ExitCode::from(e.exit_code() as u8)
}
