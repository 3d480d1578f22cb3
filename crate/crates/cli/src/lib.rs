//! Command-line front end: argument parsing, run configuration, commands
//! and SVG output. The `dmpvae` binary is a thin wrapper over [`run_args`].

pub mod commands;
pub mod config;
pub mod plot;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "dmpvae", version, about = "Multi-task trajectory generation with a conditional VAE over DMP forces")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; also replaces the augmentation and training seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Use one worker thread; results are identical either way.
    #[arg(long, global = true)]
    pub single_thread: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build the digit templates and write the augmented dataset.
    Augment {
        /// Noisy copies per template.
        #[arg(long)]
        copies: Option<usize>,
        /// Relative weight noise.
        #[arg(long)]
        k: Option<f64>,
    },
    /// Train the model on a dataset written by `augment`.
    Train {
        /// Defaults to `<out>/dataset.csv`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Generate one trajectory; fine-tunes when via-points are given.
    Generate(GenerateArgs),
    /// Generate, then fine-tune through the via-points.
    Finetune(GenerateArgs),
    /// Per-digit end, via-point and shape errors.
    EvalHandwriting {
        /// Defaults to `<out>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Random endpoints per digit.
        #[arg(long)]
        endpoints: Option<usize>,
    },
    /// Reaching and pushing success rates in the planar simulator.
    EvalSim {
        /// Defaults to `<out>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// reach, push or both
        #[arg(long, default_value = "both")]
        task: String,
        /// Seeded episodes per task.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Render trajectory CSV files as one SVG.
    Plot {
        /// Trajectory CSV files; augmented copies are drawn faint.
        inputs: Vec<PathBuf>,
        /// Output file; defaults to `<out>/plot.svg`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct GenerateArgs {
    /// Defaults to `<out>/model.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Digit to draw.
    #[arg(long)]
    pub task: u32,
    /// Comma-separated, e.g. `0,1`.
    #[arg(long, default_value = "0,1")]
    pub start: String,
    #[arg(long)]
    pub goal: String,
    /// Repeatable.
    #[arg(long)]
    pub via: Vec<String>,
    /// Latent vector; sampled from the seed when omitted.
    #[arg(long)]
    pub z: Option<String>,
    /// Fine-tune loss weights `shape,end,via`.
    #[arg(long)]
    pub weights: Option<String>,
    /// File name stem of the outputs.
    #[arg(long, default_value = "generated")]
    pub name: String,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(dmpvae::Error),
}

impl From<dmpvae::Error> for CliError {
    fn from(e: dmpvae::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    /// 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> u8 {
        use dmpvae::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(E::Config(_) | E::UnknownTask { .. }) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
