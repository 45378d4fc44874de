mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use semsegdepth::Error;

/// Semantic segmentation and depth completion: data, training, evaluation
/// and ablation runs.
#[derive(Debug, Parser)]
#[command(name = "semsegdepth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML). Omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory of this command.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory; overrides the config and SEMSEGDEPTH_DATA_ROOT.
    #[arg(long)]
    data_root: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a procedural toy dataset in the on-disk layout.
    GenerateData {
        #[command(flatten)]
        common: Common,
        /// Number of frames.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        nc: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
    },
    /// Train one variant and keep its best checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Score a checkpoint (or the ground-truth stub) on a split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score a predictor that echoes the ground truth.
        #[arg(long)]
        oracle_stub: bool,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
    },
    /// Train and evaluate several variants under one budget.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Variant to include; repeat for more. Defaults to the config list.
        #[arg(long)]
        variant: Vec<String>,
    },
    /// Collect run directories into one table and loss-curve plot.
    Report {
        #[command(flatten)]
        common: Common,
        runs: Vec<PathBuf>,
    },
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match error {
            Error::Config { .. } | Error::UnknownVariant(_) => 1,
            Error::Divergence { .. } => 3,
            _ => 2,
        };
        Self { code, error }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e).into()
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Config { .. } => "config",
        Error::UnknownVariant(_) => "unknown_variant",
        Error::Divergence { .. } => "divergence",
        Error::MissingCheckpoint(_) => "missing_checkpoint",
        Error::MissingFile(_) => "missing_file",
        Error::EmptySplit => "empty_split",
        Error::Checkpoint(_) => "checkpoint",
        Error::Dataset(_) => "dataset",
        Error::Io(_) => "io",
        _ => "runtime",
    }
}

fn error_record(f: &Failure) -> serde_json::Value {
    let mut rec = serde_json::json!({
        "error": kind(&f.error),
        "message": f.error.to_string(),
        "exit_code": f.code,
    });
    match &f.error {
        Error::Config { key, .. } => rec["key"] = key.clone().into(),
        Error::Divergence { step } => rec["step"] = (*step).into(),
        _ => {}
    }
    rec
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rec = serde_json::json!({
                "error": "usage",
                "message": e.to_string().trim(),
                "exit_code": 1,
            });
            eprintln!("{rec}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::GenerateData { common, n, nc, height, width } => {
            commands::generate_data(&common, n, nc, height, width)
        }
        Command::Train { common, variant } => commands::train(&common, variant.as_deref()),
        Command::Evaluate {
            common,
            variant,
            checkpoint,
            oracle_stub,
            split,
        } => commands::evaluate(&common, variant.as_deref(), checkpoint.as_deref(), oracle_stub, split),
        Command::Ablate { common, variant } => commands::ablate(&common, &variant),
        Command::Report { common, runs } => commands::report(&common, &runs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", error_record(&f));
            ExitCode::from(f.code)
        }
    }
}
