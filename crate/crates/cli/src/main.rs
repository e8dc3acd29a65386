//! `phonostudio`: lexicon preparation, G2P training, genome search,
//! evaluation, transcription and the recording-studio service.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use phonostudio::models::{Architecture, DEFAULT_MAX_LEN};
use phonostudio::training::{DEFAULT_LEARNING_RATE, DEFAULT_THRESHOLD, DEFAULT_WINDOW};

#[derive(Parser, Debug)]
#[command(
    name = "phonostudio",
    version,
    about = "Grapheme-to-phoneme toolkit and speech recording studio"
)]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Leave wall-clock fields out of JSON outputs.
    #[arg(long, global = true)]
    pub no_timestamps: bool,
    /// Log filter used when RUST_LOG is unset.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Lexicon preparation.
    #[command(subcommand)]
    Lexicon(LexiconCommand),
    /// Train a model from a genome.
    Train(TrainArgs),
    /// Search genomes with the evolution strategy.
    Evolve(EvolveArgs),
    /// Word and phoneme error rates of a checkpoint on a lexicon.
    Eval(EvalArgs),
    /// Transcribe text with a checkpoint and an optional lexicon.
    Transcribe(TranscribeArgs),
    /// Run the recording-studio HTTP service.
    Serve(ServeArgs),
}

#[derive(Subcommand, Debug)]
pub enum LexiconCommand {
    /// Load, filter and save a lexicon as JSON.
    Prepare(PrepareArgs),
    /// Seeded train/test split of a prepared lexicon.
    Split(SplitArgs),
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["input", "cmudict"])))]
pub struct PrepareArgs {
    /// Language spec JSON; optional for CMUdict input.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Wiktionary-style `word<TAB>ipa` file.
    #[arg(long = "in", value_name = "TSV")]
    pub input: Option<PathBuf>,
    /// CMUdict 0.7b file.
    #[arg(long, value_name = "FILE")]
    pub cmudict: Option<PathBuf>,
    /// Output lexicon JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Filter report JSON [default: <out>.report.json].
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub test_out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub lexicon: PathBuf,
    /// cnn or transformer.
    #[arg(long, value_parser = parse_arch)]
    pub arch: Architecture,
    /// Genome JSON file or comma-separated gene indices such as 0,1,0,1,0,1,0,0,0.
    #[arg(long)]
    pub genome: String,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    /// Overrides the genome's batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[arg(long)]
    pub no_early_stop: bool,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub early_stop_window: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub early_stop_threshold: f64,
    /// Per-step loss CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvolveArgs {
    #[arg(long)]
    pub lexicon: PathBuf,
    /// cnn or transformer.
    #[arg(long, value_parser = parse_arch)]
    pub arch: Architecture,
    /// Best genome JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-evaluation JSONL log.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub population: usize,
    #[arg(long, default_value_t = 10)]
    pub generations: usize,
    #[arg(long, default_value_t = 0.4)]
    pub elite_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lessfit_parent_prob: f64,
    #[arg(long, default_value_t = 0.1)]
    pub mutation_prob: f64,
    #[arg(long, default_value_t = 20)]
    pub fitness_epochs: usize,
    #[arg(long, default_value_t = 500)]
    pub holdout: usize,
    #[arg(long, default_value_t = 150_000)]
    pub train_cap: usize,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[arg(long)]
    pub no_early_stop: bool,
    /// Parallel fitness evaluations [default: all cores].
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Report JSON with per-word scores.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["text", "file"])))]
pub struct TranscribeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Lexicon consulted before the model.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub text: Option<String>,
    /// Text file, one prompt per line.
    #[arg(long)]
    pub file: Option<PathBuf>,
    /// JSON output with per-word provenance.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Characters stripped from word edges [default: common punctuation].
    #[arg(long)]
    pub strip_chars: Option<String>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Session config JSON.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub prompts: PathBuf,
    /// Checkpoint used by the transcription endpoint.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Lexicon consulted before the model.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Language code for the checkpoint [default: the one stored in it].
    #[arg(long)]
    pub language: Option<String>,
    /// Phonetic sidecar, one line per prompt.
    #[arg(long)]
    pub phonetic: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    s.parse()
        .map_err(|e: phonostudio::models::genome::GenomeError| e.0)
}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log_level))
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(commands::CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
