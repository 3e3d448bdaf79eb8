//! `gramark`: insert and extract multi-bit watermarks in generated code.
//!
//! Exit codes: 0 success, 1 extraction did not match the expected message,
//! 2 usage error, 3 bad input data, 4 internal error. Errors other than usage
//! errors are printed to stderr as one JSON object.

mod commands;
mod error;
mod manifest;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clap::error::ErrorKind;

use crate::setup::{CommonArgs, GenerationArgs, MessageArgs, SourceArgs, TpArgs, WatermarkArgs, WeightArgs};

#[derive(Debug, Parser)]
#[command(name = "gramark", version, about = "Multi-bit watermarks for generated code")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a watermarked continuation of a prompt
    Insert(InsertArgs),
    /// Recover the message from watermarked code
    Extract(ExtractArgs),
    /// Cut a contiguous window out of watermarked code
    Attack(AttackArgs),
    /// Train the n-gram logit source
    TrainLm(TrainLmArgs),
    /// Train the next-type predictor
    TrainPredictor(TrainPredictorArgs),
    /// Assign every vocabulary token a lexical type
    BuildTypeMap(BuildTypeMapArgs),
    /// Sweep one parameter and report extraction rate and code quality
    Sweep(SweepArgs),
    /// Robustness and false-positive report
    Eval(EvalArgs),
    /// Serve an n-gram model over the logit protocol
    ServeLm(ServeLmArgs),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Args)]
struct InsertArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    wm: WatermarkArgs,
    #[command(flatten)]
    msg: MessageArgs,
    #[command(flatten)]
    weights: WeightArgs,
    #[command(flatten)]
    generation: GenerationArgs,
    #[command(flatten)]
    tp: TpArgs,
    /// Prompt text
    #[arg(long, conflicts_with = "prompt_file", required_unless_present = "prompt_file")]
    prompt: Option<String>,
    #[arg(long, value_name = "PATH")]
    prompt_file: Option<PathBuf>,
    /// Write the continuation here (and a manifest next to it) instead of stdout
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Write the manifest here
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Write per-step decoding traces as JSON lines
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Watermarked text; reads stdin when absent
    #[arg(long, value_name = "PATH", conflicts_with = "ids_file")]
    input: Option<PathBuf>,
    /// Exact token ids: whitespace-separated integers, or a JSON object with an "ids" array
    /// (such as an insert manifest)
    #[arg(long, value_name = "PATH")]
    ids_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    wm: WatermarkArgs,
    /// Expected message; the result reports whether it was recovered
    #[command(flatten)]
    msg: MessageArgs,
    #[command(flatten)]
    input: InputArgs,
    /// from-start: the text begins at the first generated token; cropped: it may not
    #[arg(long, default_value = "from-start", value_parser = ["from-start", "cropped"])]
    mode: String,
    /// Worker threads (default: all cores)
    #[arg(long)]
    workers: Option<usize>,
    /// Minimum lead over the runner-up for a match
    #[arg(long, default_value_t = 0)]
    min_margin: u32,
}

#[derive(Debug, Args)]
struct AttackArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    input: InputArgs,
    /// Share of tokens removed
    #[arg(long)]
    crop_rate: f64,
    #[arg(long, default_value = "suffix-keep", value_parser = ["suffix-keep", "prefix-keep", "random-window"])]
    crop_mode: String,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Debug, Args)]
struct TrainLmArgs {
    /// Corpus file or directory; documents are separated by `#%%` lines (default: bundled corpus)
    #[arg(long, value_name = "PATH")]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Interpolation weights, lowest order first
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Probability floor
    #[arg(long)]
    floor: Option<f64>,
    #[arg(long, default_value = "lexeme", value_parser = ["lexeme", "char-pair"])]
    tokenizer: String,
    /// Emit plain log-probabilities instead of floor-relative ones
    #[arg(long)]
    raw_logprobs: bool,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainPredictorArgs {
    #[arg(long, value_name = "PATH")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    context_window: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BuildTypeMapArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Trained n-gram model (default: train one on the bundled corpus)
    #[arg(long, value_name = "PATH")]
    lm: Option<PathBuf>,
    /// Corpus the prompts and reference continuations are cut from (default: bundled)
    #[arg(long, value_name = "PATH")]
    corpus: Option<PathBuf>,
    #[command(flatten)]
    wm: WatermarkArgs,
    #[command(flatten)]
    tp: TpArgs,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 5.0)]
    beta: f64,
    #[arg(long, default_value_t = 3.0)]
    gamma: f64,
    /// Generated tokens per trial
    #[arg(long, default_value_t = 200)]
    length: usize,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    bench: BenchArgs,
    #[arg(long, value_parser = ["beta", "gamma", "length", "crop-rate"])]
    axis: String,
    /// Comma-separated values of the swept parameter
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    crop_rate: f64,
    #[arg(long, default_value = "suffix-keep", value_parser = ["suffix-keep", "prefix-keep", "random-window"])]
    crop_mode: String,
    /// JSON report (default: stdout)
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
    /// Whitespace-separated columns for plotting
    #[arg(long, value_name = "PATH")]
    emit_plot_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    bench: BenchArgs,
    /// Crop rates for the robustness table
    #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5])]
    crop_rates: Vec<f64>,
    /// Unwatermarked corpus snippets checked for false positives
    #[arg(long, default_value_t = 1000)]
    fp_snippets: usize,
    /// Message the false-positive check looks for (default: the configured message, else 2024 reduced to the width)
    #[command(flatten)]
    msg: MessageArgs,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeLmArgs {
    #[arg(long, value_name = "PATH")]
    lm: Option<PathBuf>,
    /// Listen on this TCP address instead of stdin/stdout
    #[arg(long, value_name = "HOST:PORT")]
    listen: Option<String>,
    /// Exit after the first TCP connection closes
    #[arg(long, requires = "listen")]
    once: bool,
    #[arg(long, default_value = "json", value_parser = ["json", "base64"])]
    encoding: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => e.report(),
    }
}
