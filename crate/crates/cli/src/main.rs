use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pkv2_cli::commands::{bench, rfield, shapes, verify, weights};

/// Poly-kernel gate verification and benchmarking harness.
#[derive(Parser)]
#[command(name = "pkv2", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that the fused single-kernel path reproduces the multi-branch path
    Verify(verify::VerifyArgs),
    /// Time the multi-branch and fused paths on identical inputs
    Bench(bench::BenchArgs),
    /// Emit the branch-support coverage map
    Rfield(rfield::RfieldArgs),
    /// Create, re-serialize, validate, or inspect weight files
    Weights(weights::WeightsArgs),
    /// Report per-stage backbone output shapes
    Shapes(shapes::ShapesArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Verify(args) => verify::run(args),
        Command::Bench(args) => bench::run(args),
        Command::Rfield(args) => rfield::run(args),
        Command::Weights(args) => weights::run(args),
        Command::Shapes(args) => shapes::run(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
