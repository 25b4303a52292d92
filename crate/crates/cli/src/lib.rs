//! The `umamba` command line: synth, train, predict, evaluate and compare.

mod commands;
mod compare;
mod error;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use umamba_core::io::RunConfig;
use umamba_core::network::Variant;

pub use compare::{Baseline, CompareReport, LabelSummary, VariantResult};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "umamba", version, about = "3D segmentation with Mamba-augmented U-Nets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (JSON). Omitted fields take full-scale defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the config section the command uses.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to data.output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset and its manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_cases: Option<usize>,
    },
    /// Train one fold, or every fold with --all-folds.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, conflicts_with = "all_folds")]
        fold: Option<usize>,
        #[arg(long)]
        all_folds: bool,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
    },
    /// Segment every image of a manifest with an ensemble of checkpoints.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Checkpoint file; repeat for an ensemble.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        /// Directory holding fold_*/checkpoint.umck from `train`.
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
    /// Score predicted masks against reference masks.
    Evaluate {
        /// Reference manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Manifest of predicted masks.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score every variant preset on one fold of the same dataset.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Existing dataset; a synthetic one is generated when omitted.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Restrict to one variant.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long)]
        fold: Option<usize>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    match &common.config {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

/// Parses `argv` (including the program name) and runs the command,
/// writing human-readable output to `out`.
pub fn run_with(argv: &[String], out: &mut dyn Write) -> Result<(), CliError> {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            write!(out, "{e}").map_err(|e| CliError::Invalid(e.to_string()))?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string().trim_end().to_string())),
    };
    match cli.command {
        Command::Synth { common, n_cases } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.synth.seed = s;
            }
            if let Some(n) = n_cases {
                cfg.synth.n_cases = n;
            }
            let dir = common.out.unwrap_or_else(|| cfg.data.output_dir.clone());
            commands::synth(&cfg, &dir, out)
        }
        Command::Train { common, manifest, fold, all_folds, variant } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.train.seed = s;
            }
            if let Some(v) = variant {
                cfg.network = cfg.network.with_variant(v);
            }
            cfg.validate()?;
            let manifest = manifest.or_else(|| cfg.data.manifest.clone()).ok_or_else(|| no_manifest("train"))?;
            let folds: Vec<usize> = if all_folds { (0..cfg.train.folds).collect() } else { vec![fold.unwrap_or(0)] };
            let dir = common.out.unwrap_or_else(|| cfg.data.output_dir.clone());
            commands::train(&cfg, &manifest, &folds, &dir, out)
        }
        Command::Predict { common, manifest, checkpoints, model_dir } => {
            let cfg = load_config(&common)?;
            let manifest = manifest.or_else(|| cfg.data.manifest.clone()).ok_or_else(|| no_manifest("predict"))?;
            let mut paths = checkpoints;
            if let Some(d) = model_dir {
                paths.extend(commands::find_checkpoints(&d)?);
            }
            if paths.is_empty() {
                return Err(CliError::Usage("predict needs --checkpoint or --model-dir".into()));
            }
            let dir = common.out.unwrap_or_else(|| cfg.data.output_dir.clone());
            commands::predict(&cfg, &manifest, &paths, &dir, out)
        }
        Command::Evaluate { manifest, pred, out: dir } => commands::evaluate(&manifest, &pred, dir.as_deref(), out),
        Command::Compare { common, manifest, variant, fold } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.train.seed = s;
                cfg.synth.seed = s;
            }
            if let Some(v) = variant {
                cfg.compare.variants = vec![v];
            }
            if let Some(f) = fold {
                cfg.compare.fold = f;
            }
            cfg.validate()?;
            let dir = common.out.unwrap_or_else(|| cfg.data.output_dir.clone());
            compare::compare(&cfg, manifest.as_deref().or(cfg.data.manifest.as_deref()), &dir, out).map(|_| ())
        }
    }
}

fn no_manifest(cmd: &str) -> CliError {
    CliError::Usage(format!("{cmd} needs --manifest or data.manifest in the config"))
}

/// Entry point used by the binary: errors go to stderr as one JSON line.
pub fn run(argv: &[String]) -> i32 {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run_with(argv, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
