//! `tobmeter`: third-octave exposure analysis from the command line.
//!
//! Exit codes: 0 clean, 2 exceedance or alert found, 1 error. Errors are a
//! single stderr line of the form `error[<code>]: <message>`.

mod commands;
mod monitor;
mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tobmeter_core::{ChannelSelect, SampleFormat, WeightingKind};

pub use report::{Envelope, InputDigest, RunConfig};

pub const EXIT_CLEAN: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FOUND: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] tobmeter_core::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Usage(_) => "usage",
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "tobmeter", version, about = "Third-octave band exposure analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Third-octave band levels of a WAV file.
    Analyze(AnalyzeArgs),
    /// Compare band levels against guideline tables (exit 2 on exceedance).
    Assess(AssessArgs),
    /// Stream audio through the band detector (exit 2 if any alert fired).
    Monitor(MonitorArgs),
    /// Write a sine test tone.
    Tone(ToneArgs),
    /// Duck a track and mix a tone into it.
    Inject(InjectArgs),
    /// Before/after comparison of a speaker's high-frequency output.
    Compare(CompareArgs),
    /// Incoherent sum of decibel levels.
    Combine(CombineArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
    Table,
}

impl ReportFormat {
    fn name(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Table => "table",
        }
    }
}

#[derive(Debug, Clone, Args)]
struct LevelArgs {
    /// z, a, hp or hp:<cutoff_hz>.
    #[arg(long)]
    weighting: Option<WeightingKind>,
    /// SPL of a full-scale sine, in dB.
    #[arg(long, default_value_t = tobmeter_core::audio_io::DEFAULT_FULLSCALE_SPL_DB)]
    calibration: f64,
    /// Lowest band centre; defaults to the lowest band the input can resolve.
    #[arg(long)]
    lo: Option<f64>,
    /// Highest band centre; defaults to the highest band clear of aliasing (at most 20 kHz).
    #[arg(long)]
    hi: Option<f64>,
    /// first, mix, or a zero-based channel index.
    #[arg(long, default_value = "first", value_parser = parse_channel)]
    channel: ChannelSelect,
}

fn parse_channel(s: &str) -> Result<ChannelSelect, String> {
    match s {
        "first" => Ok(ChannelSelect::First),
        "mix" | "mixdown" => Ok(ChannelSelect::Mixdown),
        n => n
            .parse()
            .map(ChannelSelect::Index)
            .map_err(|_| format!("expected 'first', 'mix' or a channel index, got '{n}'")),
    }
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    input: PathBuf,
    #[command(flatten)]
    levels: LevelArgs,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    format: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AssessArgs {
    /// WAV recording or a spectrum JSON produced by `analyze`.
    input: PathBuf,
    /// Builtin table name (hfn-mean, hfn-median, lfn-curve) or a CSV path.
    /// Repeatable; defaults to every builtin table matching the weighting.
    #[arg(long = "table")]
    tables: Vec<String>,
    #[command(flatten)]
    levels: LevelArgs,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    format: ReportFormat,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MonitorArgs {
    /// WAV file, or `-` for raw frames on stdin (`f32le <rate> <channels>` header line).
    input: PathBuf,
    /// Band centre to watch; repeatable, paired with --threshold.
    #[arg(long = "band")]
    bands: Vec<f64>,
    /// Threshold in dB; one value for all bands or one per band.
    #[arg(long = "threshold", allow_negative_numbers = true)]
    thresholds: Vec<f64>,
    /// Builtin table name or CSV path whose limits become thresholds.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value_t = tobmeter_core::detector::DEFAULT_PERSISTENCE)]
    persistence: u32,
    #[arg(long, default_value_t = tobmeter_core::detector::DEFAULT_RELEASE)]
    release: u32,
    #[arg(long)]
    weighting: Option<WeightingKind>,
    #[arg(long, default_value_t = tobmeter_core::audio_io::DEFAULT_FULLSCALE_SPL_DB)]
    calibration: f64,
    /// Analysis window in samples.
    #[arg(long, default_value_t = tobmeter_core::detector::DEFAULT_WINDOW)]
    window: usize,
    /// Frames handed to the detector per read.
    #[arg(long, default_value_t = 4096)]
    chunk: usize,
    #[arg(long, default_value = "first", value_parser = parse_channel)]
    channel: ChannelSelect,
    /// Append closed alerts to this file as JSON lines.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct ToneShape {
    #[arg(long = "freq")]
    frequency_hz: f64,
    /// Peak amplitude as a fraction of full scale.
    #[arg(long, conflicts_with = "level")]
    amplitude: Option<f64>,
    /// Target SPL of the tone under --calibration.
    #[arg(long)]
    level: Option<f64>,
    #[arg(long, default_value_t = tobmeter_core::audio_io::DEFAULT_FULLSCALE_SPL_DB)]
    calibration: f64,
    #[arg(long, default_value_t = tobmeter_core::tonegen::DEFAULT_FADE_MS)]
    fade_ms: f64,
    #[arg(long, value_parser = parse_sample_format, default_value = "pcm16")]
    format: SampleFormat,
    /// Seed for the 16-bit export dither.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_sample_format(s: &str) -> Result<SampleFormat, String> {
    s.parse().map_err(|e: tobmeter_core::Error| e.to_string())
}

#[derive(Debug, Args)]
struct ToneArgs {
    #[command(flatten)]
    shape: ToneShape,
    #[arg(long = "dur")]
    duration_s: f64,
    #[arg(long, default_value_t = tobmeter_core::tonegen::DEFAULT_SAMPLE_RATE)]
    rate: u32,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct InjectArgs {
    track: PathBuf,
    #[command(flatten)]
    shape: ToneShape,
    /// How far to pull the track down before mixing, in dB.
    #[arg(long, default_value_t = 0.0)]
    attenuation: f64,
    #[arg(long, default_value = "first", value_parser = parse_channel)]
    channel: ChannelSelect,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    pre: PathBuf,
    post: PathBuf,
    /// Drop (dB) beyond which a band counts as damaged.
    #[arg(long, default_value_t = tobmeter_core::degradation::DEFAULT_DAMAGE_THRESHOLD_DB)]
    threshold: f64,
    #[arg(long, default_value_t = 125.0)]
    lo: f64,
    #[arg(long, default_value_t = 16_000.0)]
    hi: f64,
    #[arg(long, default_value = "first", value_parser = parse_channel)]
    channel: ChannelSelect,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    format: ReportFormat,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CombineArgs {
    #[arg(required = true, allow_negative_numbers = true)]
    levels: Vec<f64>,
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_CLEAN;
            }
            // Fold clap's multi-line message into one line, dropping the usage block.
            let rendered = e.to_string();
            let message = rendered
                .lines()
                .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect::<Vec<_>>()
                .join(" ");
            let message = message.trim_start_matches("error: ");
            eprintln!("error[usage]: {message}");
            return EXIT_ERROR;
        }
    };

    let outcome = match cli.command {
        Command::Analyze(a) => commands::analyze(a),
        Command::Assess(a) => commands::assess(a),
        Command::Monitor(a) => monitor::monitor(a),
        Command::Tone(a) => commands::tone(a),
        Command::Inject(a) => commands::inject(a),
        Command::Compare(a) => commands::compare(a),
        Command::Combine(a) => commands::combine(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {message}", e.code());
            EXIT_ERROR
        }
    }
}
