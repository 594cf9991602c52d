//! `nac`: per-image self-supervised denoising experiments from the command line.
//!
//! Every run writes to `<out>/<run-id>/`, where the run id is a prefix of the
//! digest of the merged configuration. Outputs depend only on the
//! configuration; timing goes to stderr.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand as ClapSubcommand};
use nac_core::engine::EngineError;
use nac_core::io::IoError;
use nac_core::metrics::MetricError;
use nac_core::pipeline::TrainError;
use nac_core::theory::TheoryError;
use thiserror::Error;

pub use config::{RunConfig, Settings, Subcommand};

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_ACCEPTANCE: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("config file {path}: {reason}")]
    ConfigFile { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("cannot write to the console: {0}")]
    Console(#[source] std::io::Error),
    #[error("{0}")]
    RunsFailed(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// Machine-readable failure class for the stderr error record.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "invalid-arguments",
            CliError::Config(_) => "invalid-config",
            CliError::ConfigFile { .. } => "invalid-config-file",
            CliError::Io(e) => e.kind(),
            CliError::Train(TrainError::Diverged { .. }) => "training-diverged",
            CliError::Train(_) => "training-failed",
            CliError::Theory(_) => "theory-failed",
            CliError::Engine(_) => "engine-failed",
            CliError::Metric(_) => "metric-failed",
            CliError::Write { .. } => "output-write-failed",
            CliError::Console(_) => "console-write-failed",
            CliError::RunsFailed(_) => "image-runs-failed",
            CliError::Failed(_) => "acceptance-failed",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::ConfigFile { .. } => EXIT_VALIDATION,
            CliError::Io(IoError::NotFound(_)) => EXIT_VALIDATION,
            CliError::Failed(_) => EXIT_ACCEPTANCE,
            _ => EXIT_RUNTIME,
        }
    }

    /// One-line JSON error record.
    pub fn record(&self) -> String {
        serde_json::json!({
            "error": {
                "kind": self.kind(),
                "message": self.to_string(),
                "exit_code": self.exit_code(),
            }
        })
        .to_string()
    }
}

#[derive(Parser, Debug)]
#[command(name = "nac", version, about = "Per-image self-supervised denoising: train on the noisy image itself")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(clap::Args, Debug)]
pub struct CommandArgs {
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(ClapSubcommand, Debug)]
pub enum Command {
    /// Train on one image and write its denoised version.
    Denoise(CommandArgs),
    /// Run a dataset at one or more noise levels and tabulate PSNR and SSIM.
    Benchmark(CommandArgs),
    /// Monte Carlo checks of the noise statistics the method relies on.
    VerifyTheory(CommandArgs),
    /// Finite-difference checks of every layer's gradients.
    Gradcheck(CommandArgs),
}

impl Command {
    fn split(self) -> (Subcommand, CommandArgs) {
        match self {
            Command::Denoise(a) => (Subcommand::Denoise, a),
            Command::Benchmark(a) => (Subcommand::Benchmark, a),
            Command::VerifyTheory(a) => (Subcommand::VerifyTheory, a),
            Command::Gradcheck(a) => (Subcommand::Gradcheck, a),
        }
    }
}

/// Merges the config file under the flags and validates the result.
pub fn resolve(command: Command) -> Result<RunConfig, CliError> {
    let (sub, args) = command.split();
    let settings = match &args.config {
        Some(path) => args.settings.merged_over(Settings::from_file(path)?),
        None => args.settings,
    };
    RunConfig::resolve(sub, settings)
}

/// Runs a resolved configuration, writing its summary to `out`. Returns the run directory.
pub fn execute(cfg: &RunConfig, out: &mut dyn Write) -> Result<PathBuf, CliError> {
    match cfg.subcommand {
        Subcommand::Denoise => commands::denoise(cfg, out),
        Subcommand::Benchmark => commands::benchmark(cfg, out),
        Subcommand::VerifyTheory => commands::verify_theory(cfg, out),
        Subcommand::Gradcheck => commands::gradcheck(cfg, out),
    }
}

/// Parses `args`, runs the command, and reports failures as a JSON record on stderr.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    ExitCode::from(run_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock()))
}

/// [`run`] with explicit console streams. Returns the exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    // A failing console write cannot be reported anywhere else.
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{e}");
            return 0;
        }
        Err(e) => {
            let failure = CliError::Usage(e.render().to_string().trim().to_string());
            let _ = writeln!(err, "{}", failure.record());
            return failure.exit_code();
        }
    };
    let start = std::time::Instant::now();
    let outcome = resolve(cli.command).and_then(|cfg| execute(&cfg, out));
    let _ = writeln!(err, "wall clock: {:.2} s", start.elapsed().as_secs_f64());
    match outcome {
        Ok(_) => 0,
        Err(failure) => {
            let _ = writeln!(err, "{}", failure.record());
            failure.exit_code()
        }
    }
}
