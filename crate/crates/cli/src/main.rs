//! `hypnoeval`: batch evaluation of sleep-stage predictors over recording
//! manifests.
//!
//! Exit codes: 0 when every recording yields a report or a structured skip,
//! 1 when any recording hits a hard error, 2 for configuration errors, which
//! are raised before any data file is read.

mod commands;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hypnoeval::markers::RateDenominator;
use hypnoeval::metrics::AbsentClass;

#[derive(Parser, Debug)]
#[command(name = "hypnoeval", version, about = "Evaluate sleep-stage predictors against multi-scorer consensus")]
struct Cli {
    /// Report destination; stdout when absent.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Worker threads for per-recording work; defaults to available parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Soft-vote model hypnodensities and write the ensemble per recording.
    Ensemble(EnsembleArgs),
    /// Agreement metrics of a prediction against consensus or a named scorer.
    Evaluate(EvaluateArgs),
    /// Clinical sleep markers and, with a reference, marker bias.
    Markers(MarkersArgs),
    /// Ensemble uncertainty features and LORO prediction of scorer disagreement.
    Disagree(DisagreeArgs),
    /// One-sided Wilcoxon comparisons of per-recording metric tables.
    Stats(StatsArgs),
    /// Expected value of a fitted GAMLSS bias model for one covariate profile.
    GamlssPredict(GamlssArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ManifestArgs {
    /// Recording manifests (JSON), processed and reported in this order.
    #[arg(long = "manifest", required = true, num_args = 1..)]
    pub manifests: Vec<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct EnsembleArgs {
    #[command(flatten)]
    pub input: ManifestArgs,
    /// Model names to combine; all models when absent.
    #[arg(long, value_delimiter = ',')]
    pub members: Vec<String>,
    #[arg(long, value_enum, default_value_t = Combine::Soft)]
    pub combine: Combine,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Combine {
    /// Mean of member distributions.
    Soft,
    /// Majority vote of member argmax labels.
    ChannelMajority,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: ManifestArgs,
    /// `ensemble`, `model:NAME` or `scorer:NAME`.
    #[arg(long, default_value = "ensemble")]
    pub predict: String,
    #[arg(long, value_delimiter = ',')]
    pub members: Vec<String>,
    /// `consensus` or `scorer:NAME`.
    #[arg(long, default_value = "consensus")]
    pub against: String,
    /// Number of most reliable scorers forming the consensus.
    #[arg(long, default_value_t = hypnoeval::consensus::DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long, default_value = "exclude", value_parser = parse_absent)]
    pub absent: AbsentClass,
}

#[derive(Args, Debug, Clone)]
pub struct MarkersArgs {
    #[command(flatten)]
    pub input: ManifestArgs,
    #[arg(long, default_value = "ensemble")]
    pub predict: String,
    #[arg(long, value_delimiter = ',')]
    pub members: Vec<String>,
    /// `consensus` or `scorer:NAME`; enables bias output.
    #[arg(long)]
    pub against: Option<String>,
    #[arg(long, default_value_t = hypnoeval::consensus::DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long, default_value = "tst", value_parser = parse_denominator)]
    pub denominator: RateDenominator,
}

#[derive(Args, Debug, Clone)]
pub struct DisagreeArgs {
    #[command(flatten)]
    pub input: ManifestArgs,
    #[arg(long, value_delimiter = ',')]
    pub members: Vec<String>,
    /// Feature sets to evaluate: entropy, distance, both.
    #[arg(long = "feature-set", value_delimiter = ',', default_value = "entropy,distance,both")]
    pub feature_sets: Vec<String>,
    #[arg(long, default_value_t = hypnoeval::disagreement::DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = hypnoeval::disagreement::DEFAULT_WINDOW_S)]
    pub window_s: f64,
    /// Write one `<recording>.features.csv` per recording here.
    #[arg(long)]
    pub dump_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct StatsArgs {
    /// Metric tables: `recording_id` column plus one column per model.
    #[arg(long = "table", required = true, num_args = 1..)]
    pub tables: Vec<PathBuf>,
    /// Column compared against every other column.
    #[arg(long)]
    pub candidate: String,
    #[arg(long, value_enum, default_value_t = AlternativeArg::Greater)]
    pub alternative: AlternativeArg,
    /// Also report each column's absolute deviations from its median.
    #[arg(long)]
    pub consistency: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlternativeArg {
    Greater,
    Less,
}

#[derive(Args, Debug, Clone)]
pub struct GamlssArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub outcome: String,
    #[arg(long, value_enum)]
    pub gender: Gender,
    /// Apnea-hypopnea index, events per hour.
    #[arg(long, default_value_t = 0.0)]
    pub ahi: f64,
    /// Periodic limb movement index, events per hour.
    #[arg(long, default_value_t = 0.0)]
    pub plmi: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub age_offset_mu: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub age_offset_sigma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Gender {
    Female,
    Male,
}

fn parse_absent(s: &str) -> Result<AbsentClass, String> {
    s.parse()
}

fn parse_denominator(s: &str) -> Result<RateDenominator, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("configuration error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match &cli.command {
        Command::Ensemble(a) => commands::ensemble(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Markers(a) => commands::markers(a),
        Command::Disagree(a) => commands::disagree(a),
        Command::Stats(a) => commands::stats(a),
        Command::GamlssPredict(a) => commands::gamlss_predict(a),
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(commands::Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            return ExitCode::from(2);
        }
        Err(commands::Failure::Hard(e)) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let text = match render::render(&outcome.report, cli.format) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let written = match &cli.output {
        Some(path) => std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    if outcome.hard_errors > 0 {
        eprintln!("error: {} recording(s) failed; see the report's error entries", outcome.hard_errors);
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}
