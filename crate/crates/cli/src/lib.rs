//! The `gifguard` command line: one subcommand per pipeline stage, each
//! reading the previous stage's artifacts from disk, plus a synthetic
//! end-to-end smoke run.

use std::path::{Path, PathBuf};

use gifguard_annotate::AnnotateError;
use gifguard_core::augment::AugmentError;
use gifguard_core::manifest::ManifestError;
use gifguard_core::metrics::MetricsError;
use gifguard_core::model::ModelError;
use gifguard_core::preprocess::PreprocessError;
use gifguard_core::train::TrainError;
use gifguard_ingest::{IngestError, SeedError};

pub mod args;
pub mod config;
pub mod smoke;
pub mod stages;

pub use args::{Cli, Command};
pub use config::{CommonArgs, PipelineConfig};
pub use stages::Layout;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing {}; run `gifguard {stage}` first", .path.display())]
    StageMissing { stage: &'static str, path: PathBuf },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Seeds(#[from] SeedError),
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("smoke check failed: {0}")]
    Smoke(String),
}

impl CliError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.display().to_string(), message: e.to_string() }
    }
}

/// Runs one parsed invocation.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = PipelineConfig::resolve(&cli.common)?;
    match cli.command {
        Command::Collect(a) => {
            let summary = stages::collect(&config, &a)?;
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
        }
        Command::Serve(a) => stages::serve(&config, &a)?,
        Command::Preprocess => {
            config.validate()?;
            print!("{}", stages::preprocess(&config)?.to_table());
        }
        Command::Split => {
            config.validate()?;
            let counts = stages::split(&config)?;
            println!("train {} / val {} / test {}", counts[0], counts[1], counts[2]);
        }
        Command::Augment => {
            config.validate()?;
            let n = stages::augment(&config)?;
            println!("{n} frames in the augmented index");
        }
        Command::Train => {
            config.validate()?;
            let outcome = stages::train(&config)?;
            print!("{}", outcome.test_report.to_text());
        }
        Command::Crossval => {
            config.validate()?;
            print!("{}", stages::crossval(&config)?.to_text());
        }
        Command::Evaluate(a) => print!("{}", stages::evaluate(&config, a.split.into())?.to_text()),
        Command::Report(a) => {
            let dir = a.run.unwrap_or_else(|| config.run_dir.clone());
            print!("{}", stages::report(&dir)?.to_text());
        }
        Command::Smoke => {
            if cli.common.data_root.is_none() {
                config.data_root = config.run_dir.join("data");
            }
            let outcome = smoke::run(&config)?;
            print!("{}", outcome.summary_text());
        }
        Command::Config => print!("{}", config.to_toml()),
    }
    Ok(())
}
