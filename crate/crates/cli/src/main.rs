//! `hazmargin`: calibrate, screen and evaluate hazard margin signals, and
//! summarize logged trajectories.
//!
//! Exit codes: 0 success, 2 invalid input, 3 corpus cannot support the
//! request, 4 I/O failure. Errors go to stderr as one JSON object per line.

mod commands;
mod error;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hazmargin_core::{Category, FusionPolicy, Split};

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "hazmargin", version, about = "Hazard margin calibration and screening")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sweep per-category thresholds on the calibration split.
    Calibrate(CalibrateArgs),
    /// Apply a profile and a fusion policy, writing alert segments.
    Screen(ScreenArgs),
    /// Score alert segments against annotations.
    Evaluate(EvaluateArgs),
    /// ADE cohort statistics with percentile outlier filtering.
    TrajEval(TrajEvalArgs),
    /// Write a deterministic synthetic corpus.
    Fixtures(FixturesArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Prompt set; defaults to the one named in the manifest.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long, default_value_t = hazmargin_core::calibration::DEFAULT_STEP, value_parser = positive_f64)]
    pub step: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Tune only these categories (repeatable).
    #[arg(long = "category", conflicts_with = "all")]
    pub categories: Vec<Category>,
    /// Tune every category of the prompt set (the default).
    #[arg(long)]
    pub all: bool,
    /// Timestamp recorded in the profile (RFC 3339).
    #[arg(long, default_value = "1970-01-01T00:00:00Z")]
    pub created_at: chrono::DateTime<chrono::Utc>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct ScreenArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long)]
    pub policy: FusionPolicy,
    #[arg(long)]
    pub out: PathBuf,
    /// Restrict to one split; all videos by default.
    #[arg(long)]
    pub split: Option<Split>,
    /// Drop segments shorter than this many frames.
    #[arg(long, default_value_t = 1)]
    pub min_duration: usize,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub segments: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
    #[arg(long)]
    pub split: Option<Split>,
}

#[derive(Args, Debug)]
pub struct TrajEvalArgs {
    #[arg(long)]
    pub trajectories: PathBuf,
    /// Percentile for baseline outlier removal, 0 < q <= 100.
    #[arg(long, default_value_t = 97.5, value_parser = percentile)]
    pub q: f64,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
}

#[derive(Args, Debug)]
pub struct FixturesArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub videos: usize,
    #[arg(long, default_value_t = 50)]
    pub frames: usize,
    #[arg(long, default_value_t = 2)]
    pub categories: usize,
    #[arg(long, default_value_t = 5.0)]
    pub separability: f64,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        Ok(v) => Err(format!("{v} is not a positive finite number")),
        Err(e) => Err(e.to_string()),
    }
}

fn percentile(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v <= 100.0 => Ok(v),
        Ok(v) => Err(format!("{v} is outside (0, 100]")),
        Err(e) => Err(e.to_string()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Calibrate(args) => commands::calibrate(&args),
        Command::Screen(args) => commands::screen(&args),
        Command::Evaluate(args) => commands::evaluate(&args),
        Command::TrajEval(args) => commands::traj_eval(&args),
        Command::Fixtures(args) => commands::fixtures(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                // --help and --version
                e.exit();
            }
            let text = e.to_string();
            let message = text
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect::<Vec<_>>()
                .join(" ");
            let message = message.trim_start_matches("error: ");
            eprintln!("{}", CliError::validation(message).to_line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.code() as u8)
        }
    }
}
