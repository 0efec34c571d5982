//! `skd`: losses, gradient checks, feature analysis and harness runs from
//! the command line.
//!
//! Exit codes: 0 success, 1 check failed, 2 usage or I/O, 3 degenerate input,
//! 4 training diverged. Machine-readable JSON goes to stdout, prose to stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rankdistill::gradcheck::GradCheckKind;
use rankdistill::losses::{Epsilon, PoolTarget};

#[derive(Parser, Debug)]
#[command(name = "skd", version, about = "Rank-correlation distillation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate a loss between a student and a teacher tensor file.
    Loss(LossArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Dominant-channel curves and their agreement for feature dumps.
    Analyze(AnalyzeArgs),
    /// Run a synthetic distillation experiment from a key=value config.
    Train(TrainArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossKind {
    Spearman,
    Pearson,
    MaskL1,
    Scene,
    Response,
    Total,
}

#[derive(clap::Args, Debug)]
pub struct LossArgs {
    #[arg(value_enum)]
    pub kind: LossKind,
    pub student: PathBuf,
    pub teacher: PathBuf,
    /// Soft-rank strength: a number, or `rel:K` for K·σ/n per vector.
    #[arg(long, default_value = "rel:4", value_parser = config::parse_epsilon)]
    pub epsilon: Epsilon,
    /// Weight of the Spearman term in `total`.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Pooling target `HxW` for the Spearman and scene losses.
    #[arg(long, default_value = "16x16", value_parser = config::parse_pool)]
    pub pool: PoolTarget,
    /// Spatial mask (`HxW` or `BxHxW` tensor) for masked losses; all ones if omitted.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Write the gradient with respect to the student tensor here.
    #[arg(long)]
    pub grad_out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct GradcheckArgs {
    #[arg(value_parser = parse_check_kind)]
    pub kind: GradCheckKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest channel count and spatial side of the random inputs.
    #[arg(long, default_value_t = 8)]
    pub size: usize,
    #[arg(long, default_value_t = 100)]
    pub cases: usize,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
}

#[derive(clap::Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(required = true)]
    pub tensors: Vec<PathBuf>,
    /// Standardize each channel slice before taking the argmax.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    pub config: PathBuf,
}

fn parse_check_kind(s: &str) -> Result<GradCheckKind, String> {
    s.parse().map_err(|e: rankdistill::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Loss(a) => commands::loss(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Train(a) => commands::train(&a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
