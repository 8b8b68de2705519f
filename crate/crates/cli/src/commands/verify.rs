//! `pkv2 verify`: train-vs-fused output equivalence on seeded random inputs.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;

use pkv2_core::hkr::{hkr_equivalence_check, Tolerance};
use pkv2_core::pks::SpatialGate;

use crate::config::{materialize_module, parse_shape, resolve_module_config, resolve_seed};
use crate::report::{ConfigDescriptor, Invocations, Report};

use super::emit;

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Preset name ("pks-default"), JSON module config, or .pkv2 weight file
    #[arg(long, default_value = "pks-default")]
    pub config: String,

    /// Seed for weight generation and input draws (PKV2_SEED overrides the default)
    #[arg(long)]
    pub seed: Option<u64>,

    /// Number of seeded random inputs to compare
    #[arg(long, default_value_t = 16)]
    pub trials: usize,

    /// Input tensor shape, NxCxHxW
    #[arg(long, default_value = "1x8x32x32")]
    pub shape: String,

    /// Max allowed absolute discrepancy
    #[arg(long, default_value_t = 1e-4)]
    pub tol_abs: f32,

    /// Max allowed peak-normalized discrepancy
    #[arg(long, default_value_t = 1e-3)]
    pub tol_rel: f32,

    /// Write the JSON report here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &VerifyArgs) -> Result<u8> {
    let seed = resolve_seed(args.seed)?;
    let shape = parse_shape(&args.shape)?;
    let source = resolve_module_config(&args.config)?;
    let weights = materialize_module(source, shape.1, seed)?;
    let tol = Tolerance {
        abs: args.tol_abs,
        rel: args.tol_rel,
    };
    let eq = hkr_equivalence_check(&weights, args.trials, shape, seed, tol)?;
    let report = Report {
        mode: "verify",
        config: ConfigDescriptor::from_pks(&weights.config),
        seed,
        shape: [shape.0, shape.1, shape.2, shape.3],
        trials: args.trials,
        tolerance: tol.into(),
        invocations: Invocations {
            train: weights.conv_invocations(),
            fused: 1,
        },
        equivalence: Some(eq.into()),
        paths: None,
        warmup: None,
        iters: None,
        threads: None,
        timing: None,
        speedup: None,
    };
    emit(&report.to_json(), &args.out)?;
    Ok(if eq.pass { 0 } else { 1 })
}
