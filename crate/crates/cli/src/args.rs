use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gifguard_core::preprocess::Split;

use crate::config::CommonArgs;

#[derive(Debug, Parser)]
#[command(name = "gifguard", version, about = "Cyberbullying detection for animated GIFs")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Log filter such as `debug` or `gifguard_core=trace` (default `info`).
    #[arg(long, global = true)]
    pub log: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search the seed hashtags and download GIFs into the data root.
    Collect(CollectArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
    /// Categorize labeled GIFs, extract frames, drop duplicates and blurred frames.
    Preprocess,
    /// Assign frames to train, validation and test.
    Split,
    /// Write augmented copies of the training frames.
    Augment,
    /// Train the classifier on the hold-out split and report on the test set.
    Train,
    /// K-fold cross-validation over the cleaned frames.
    Crossval,
    /// Reload the best checkpoint and evaluate it on one split.
    Evaluate(EvaluateArgs),
    /// Rebuild the report and curves of a run from its saved predictions.
    Report(ReportArgs),
    /// Synthetic end-to-end run with pass/fail checks.
    Smoke,
    /// Print the resolved configuration as TOML.
    Config,
}

#[derive(Debug, Default, Args)]
pub struct CollectArgs {
    /// Seed file of `<tag>,<label>` lines.
    #[arg(long)]
    pub seeds: Option<PathBuf>,
    /// Overrides the GIFGUARD_API_KEY environment variable.
    #[arg(long)]
    pub api_key: Option<String>,
    /// Results per seed.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, value_parser = ["live", "record", "replay"])]
    pub fixtures: Option<String>,
    #[arg(long)]
    pub fixtures_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub addr: Option<String>,
    /// TOML file of `[[assignments]]` tables.
    #[arg(long)]
    pub assignments: Option<PathBuf>,
    /// Directory of the annotation UI's static files.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directory holding `predictions.jsonl` (default: the run dir).
    #[arg(long)]
    pub run: Option<PathBuf>,
}
