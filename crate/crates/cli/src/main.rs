//! `esgx`: config-driven batch runs of the extraction pipeline.
//!
//! Exit codes: 0 success (per-document failures are warnings), 1 invalid
//! configuration, 2 unreadable or invalid input, 3 provider unreachable,
//! 4 output could not be written.

mod backends;
mod commands;
mod config;
mod corpus;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "esgx",
    version,
    about = "Extract and evaluate ESG disclosures from corporate reports"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Run configuration file.
    #[arg(short, long, global = true, default_value = "esgx.toml")]
    pub config: PathBuf,
    /// Override the configured output root.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Print the resolved plan and exit without side effects.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Worker threads for document and indicator parallelism.
    #[arg(short, long, global = true)]
    pub jobs: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse every report of the corpus into the document model.
    Ingest,
    /// Build (or load cached) knowledge bases for the configured arm.
    BuildKb {
        #[arg(long)]
        arm: Option<String>,
    },
    /// Extract records for every document and indicator.
    Extract {
        #[arg(long)]
        arm: Option<String>,
    },
    /// Score extracted records against labels.
    Evaluate {
        /// Records file; defaults to the `extract` output.
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        arm: Option<String>,
    },
    /// Run and evaluate several pipeline variants on the same corpus.
    Ablate {
        /// Comma-separated arm ids, or `all`.
        #[arg(long, default_value = "all")]
        arms: String,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Disclosure rates, emission intensity and key-action frequencies.
    Analyze {
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Registry utilities.
    Metadata {
        #[command(subcommand)]
        action: MetadataAction,
    },
    /// Write the seeded synthetic corpus, labels, mock replies and config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = esgx_core::synthetic::DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = esgx_core::synthetic::DEFAULT_DOCS)]
        docs: usize,
    },
}

#[derive(Subcommand, Debug)]
enum MetadataAction {
    /// Check a registry file.
    Validate { path: PathBuf },
    /// Indicator counts by category and kind (`bundled` for the built-in registry).
    Stats {
        #[arg(default_value = config::BUNDLED_REGISTRY)]
        path: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(j) = cli.global.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(commands::EXIT_CONFIG);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .expect("global thread pool is configured once");
    }
    let g = &cli.global;
    let result = match cli.command {
        Command::Ingest => commands::ingest(g),
        Command::BuildKb { arm } => commands::build_kb(g, arm.as_deref()),
        Command::Extract { arm } => commands::extract(g, arm.as_deref()),
        Command::Evaluate { records, labels, arm } => {
            commands::evaluate(g, records.as_deref(), labels.as_deref(), arm.as_deref())
        }
        Command::Ablate { arms, labels } => commands::ablate(g, &arms, labels.as_deref()),
        Command::Analyze { records } => commands::analyze(g, records.as_deref()),
        Command::Metadata {
            action: MetadataAction::Validate { path },
        } => commands::metadata_validate(&path),
        Command::Metadata {
            action: MetadataAction::Stats { path },
        } => commands::metadata_stats(&path),
        Command::Synth { out, seed, docs } => commands::synth(g, &out, seed, docs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
