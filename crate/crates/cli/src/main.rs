//! `fcrx`: command-line driver for the fact-checking pipeline.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure, 4 rewriter required but unavailable.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "fcrx", version, about = "Fact-check findings in radiology reports against anatomical locations")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides `seed` in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Lexicon file; the bundled lexicon otherwise.
    #[arg(long, global = true, value_name = "PATH")]
    pub lexicon: Option<PathBuf>,
    /// Configuration override, e.g. `--set model.epochs=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lexicon files.
    #[command(subcommand)]
    Lexicon(LexiconCommand),
    /// Region annotations.
    #[command(subcommand)]
    Atlas(AtlasCommand),
    /// Real and synthetic finding-location pairs.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Training and evaluation of the verifier.
    #[command(subcommand)]
    Model(ModelCommand),
    /// Verify the findings of one report.
    Check(CheckArgs),
    /// Verify one report and rewrite its flagged sentences.
    Correct(CorrectArgs),
    /// Corpus-level assessment.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Toy pipeline end to end: generate, train, check, correct, assess.
    Demo(DemoArgs),
}

#[derive(Debug, Subcommand)]
pub enum LexiconCommand {
    /// Load a lexicon file and print a summary.
    Validate {
        path: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum AtlasCommand {
    /// Normalize pixel annotations into a region store.
    Ingest {
        path: Option<PathBuf>,
        #[arg(long, value_name = "STORE")]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Extract real pairs from reports and add perturbed fakes.
    Generate {
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        reports: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_lr: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct FeatureArgs {
    /// Sample file from `synth generate`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Image embedding store.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Finding embedding store keyed `"yes|edema"`.
    #[arg(long)]
    pub finding_embeddings: Option<PathBuf>,
    /// Reuse the featurizer of an existing checkpoint.
    #[arg(long, value_name = "CHECKPOINT")]
    pub featurizer_from: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ModelCommand {
    /// Train on the train split and report validation and test metrics.
    Train {
        #[command(flatten)]
        features: FeatureArgs,
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Metrics of a checkpoint on a sample file.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train and test each variant on the same split.
    Ablate {
        #[command(flatten)]
        features: FeatureArgs,
        #[command(flatten)]
        flags: TrainFlags,
        /// Repeatable; all variants when omitted.
        #[arg(long)]
        variant: Vec<String>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Region store from `atlas ingest`.
    #[arg(long)]
    pub atlas: Option<PathBuf>,
    #[arg(long)]
    pub image: String,
    /// Report text file.
    #[arg(long)]
    pub report: PathBuf,
    /// Reference report, adds ground-truth boxes to the explanation.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CorrectArgs {
    #[command(flatten)]
    pub check: CheckArgs,
    /// Exit 4 rather than fall back to the offline reformer.
    #[arg(long)]
    pub require_rewriter: bool,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Score, correct and re-score every report of a corpus.
    Run {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        atlas: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long)]
        require_rewriter: bool,
    },
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Defaults to `demo-<seed>`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            ExitCode::from(e.code())
        }
    }
}
