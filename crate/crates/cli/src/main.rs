//! `csfall`: synthesize clips, build sensing matrices, encode, train, evaluate,
//! measure the wrong-key reconstruction gap and tabulate results.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical failure.

mod commands;
mod config;
mod report;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Bad flags, config values or argument combinations.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Training diverged or produced non-finite values.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

#[derive(Parser, Debug)]
#[command(name = "csfall", version, about = "Compressed-domain video classification pipeline")]
pub struct Cli {
    /// TOML run configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed the command uses (data, matrix or training)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Only print errors
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic action (10-class) or fall (2-class) dataset
    Synth(SynthArgs),
    /// Generate a sensing matrix and write it as a CSM1 file
    MakeMatrix(MatrixArgs),
    /// Pack every clip of a manifest into MST1 measurement tensors
    Encode(EncodeArgs),
    /// Train (or fine-tune) the 3D ConvNet on an encoded manifest
    Train(TrainArgs),
    /// Accuracy and confusion matrix of a checkpoint on one split
    Eval(EvalArgs),
    /// Correct-key vs wrong-key reconstruction PSNR
    PrivacyEval(PrivacyArgs),
    /// Tabulate eval/history JSON files as a family × ratio CSV
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub clips_per_class: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
}

#[derive(Args, Debug)]
pub struct MatrixArgs {
    /// gaussian, bernoulli, smm, lsmm, convcs or identity
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub block: Option<usize>,
    #[arg(long)]
    pub ratio: Option<usize>,
    /// SMM sub-block side
    #[arg(long)]
    pub sub_block: Option<usize>,
    /// LSMM window width
    #[arg(long)]
    pub window: Option<usize>,
    /// ConvCS kernel side
    #[arg(long)]
    pub kernel: Option<usize>,
    /// ConvCS stride
    #[arg(long)]
    pub stride: Option<usize>,
    /// File name inside the output directory
    #[arg(long, default_value = "matrix.csm")]
    pub file: String,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub matrix: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Encoded manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// Start from this checkpoint; a different class count re-initializes the head
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Encoded manifest
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// File name inside the output directory
    #[arg(long, default_value = "eval.json")]
    pub file: String,
}

#[derive(Args, Debug)]
pub struct PrivacyArgs {
    /// Raw (unencoded) manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// The true sensing matrix
    #[arg(long)]
    pub matrix: PathBuf,
    /// Seeds for wrong-key matrices (repeatable; default: matrix seed + 1)
    #[arg(long = "wrong-seed", value_delimiter = ',')]
    pub wrong_seeds: Vec<u64>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Number of clips from the split, in manifest order
    #[arg(long, default_value_t = 1)]
    pub clips: usize,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value = "privacy.json")]
    pub file: String,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Eval or history JSON files
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Ratio columns always present
    #[arg(long, value_delimiter = ',', default_value = "4,16,32,64")]
    pub ratios: Vec<usize>,
    #[arg(long, default_value = "report.csv")]
    pub file: String,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if cause.downcast_ref::<NumericalFailure>().is_some() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<csfall::Error>() {
            return if e.is_numerical() {
                3
            } else if matches!(e, csfall::Error::InvalidArgument(_)) {
                1
            } else {
                2
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
