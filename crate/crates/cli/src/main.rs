//! Batch driver for the localization pipeline: index validation, object and
//! part localization, box regression, recognition, evaluation, and synthetic
//! dataset generation over manifest files.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

mod batch;
mod commands;
mod config;
mod dataset;
mod fvec;
mod locfile;
mod manifest;
mod models;
mod pgm;
mod predfile;
mod report;

use config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    /// Aligned plain-text tables.
    Text,
    /// Machine-readable JSON.
    Structured,
}

#[derive(Parser)]
#[command(
    name = "boxtransfer",
    version,
    about = "Nonparametric object/part localization, box regression, and recognition",
    propagate_version = true
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for batch stages (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Seed override for seeded stages (synthesis, classifier training).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Directory all outputs are written into (default: current directory).
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// Report rendering on stdout and in report files.
    #[arg(long, global = true, value_enum, default_value = "text")]
    format: OutputFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a manifest plus its features and write an index summary.
    BuildIndex(commands::build_index::Args),
    /// Transfer object (and optionally part) boxes onto test images.
    Localize(commands::localize::Args),
    /// Fit the per-class box regressor on leave-one-out proposals.
    TrainRegressor(commands::train_regressor::Args),
    /// Apply a fitted regressor to localization results.
    Refine(commands::refine::Args),
    /// Train the one-vs-all linear classifier on region features.
    TrainClassifier(commands::train_classifier::Args),
    /// Classify test images and report accuracy when labels exist.
    Recognize(commands::recognize::Args),
    /// Score localizations (PCP) and predictions (accuracy) against ground truth.
    Evaluate(commands::evaluate::Args),
    /// Generate a seeded synthetic dataset with manifests and assets.
    SynthGen(commands::synth_gen::Args),
}

/// Everything a command needs besides its own flags.
pub struct Ctx {
    pub cfg: RunConfig,
    pub output_dir: PathBuf,
    pub format: OutputFormat,
}

impl Ctx {
    /// Print a command summary: one human line, or one JSON document.
    pub fn emit(&self, text: String, json: serde_json::Value) {
        match self.format {
            OutputFormat::Text => println!("{text}"),
            OutputFormat::Structured => {
                println!("{}", serde_json::to_string_pretty(&json).expect("summaries serialize"));
            }
        }
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("initializing the thread pool")?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.svm.seed = seed;
        cfg.synth.seed = seed;
    }
    let output_dir = cli
        .output_dir
        .or_else(|| cfg.paths.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&output_dir)
        .with_context(|| format!("creating output directory {}", output_dir.display()))?;
    cfg.paths.output_dir = Some(output_dir.clone());
    let mut ctx = Ctx { cfg, output_dir, format: cli.format };

    match cli.command {
        Command::BuildIndex(args) => commands::build_index::run(args, &mut ctx),
        Command::Localize(args) => commands::localize::run(args, &mut ctx),
        Command::TrainRegressor(args) => commands::train_regressor::run(args, &mut ctx),
        Command::Refine(args) => commands::refine::run(args, &mut ctx),
        Command::TrainClassifier(args) => commands::train_classifier::run(args, &mut ctx),
        Command::Recognize(args) => commands::recognize::run(args, &mut ctx),
        Command::Evaluate(args) => commands::evaluate::run(args, &mut ctx),
        Command::SynthGen(args) => commands::synth_gen::run(args, &mut ctx),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
