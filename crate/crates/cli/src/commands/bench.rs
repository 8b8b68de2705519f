//! `pkv2 bench`: wall-time comparison of the multi-branch and fused forward
//! paths on identical inputs. Records what it measures and asserts nothing
//! about the ratio; launch-count reduction is the structural claim, measured
//! exactly.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};

use pkv2_core::hkr::{fuse_pks, output_discrepancy, Tolerance};
use pkv2_core::init;
use pkv2_core::pks::{pks_forward_train, SpatialGate};
use pkv2_core::tensor::Tensor4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{materialize_module, parse_shape, resolve_module_config, resolve_seed};
use crate::report::{path_timing, ConfigDescriptor, EquivalenceOut, Invocations, Report, Timing};

use super::emit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PathSelection {
    Train,
    Fused,
    Both,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Preset name ("pks-default"), JSON module config, or .pkv2 weight file
    #[arg(long, default_value = "pks-default")]
    pub config: String,

    /// Which forward paths to time
    #[arg(long, value_enum, default_value_t = PathSelection::Both)]
    pub paths: PathSelection,

    /// Untimed warmup iterations per path
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,

    /// Timed iterations per path
    #[arg(long, default_value_t = 10)]
    pub iters: usize,

    /// Input tensor shape, NxCxHxW
    #[arg(long, default_value = "1x32x64x64")]
    pub shape: String,

    /// Seed for weight and input generation
    #[arg(long)]
    pub seed: Option<u64>,

    /// Worker threads; pinned to 1 by default for stable comparisons
    #[arg(long, default_value_t = 1)]
    pub threads: usize,

    /// Write the JSON report here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn time_laps<F: FnMut() -> Tensor4>(warmup: usize, iters: usize, mut f: F) -> (Vec<u64>, Tensor4) {
    for _ in 0..warmup {
        std::hint::black_box(f());
    }
    let mut laps = Vec::with_capacity(iters);
    let mut last = None;
    for _ in 0..iters {
        let t0 = Instant::now();
        let out = f();
        laps.push(t0.elapsed().as_nanos() as u64);
        last = Some(std::hint::black_box(out));
    }
    (laps, last.expect("iters >= 1"))
}

pub fn run(args: &BenchArgs) -> Result<u8> {
    if args.iters == 0 {
        anyhow::bail!("--iters must be >= 1");
    }
    if args.threads == 0 {
        anyhow::bail!("--threads must be >= 1");
    }
    let seed = resolve_seed(args.seed)?;
    let shape = parse_shape(&args.shape)?;
    let source = resolve_module_config(&args.config)?;
    let weights = materialize_module(source, shape.1, seed)?;
    let fused = fuse_pks(&weights)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = init::random_tensor(shape.0, shape.1, shape.2, shape.3, &mut rng)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .context("building worker pool")?;

    let run_train = matches!(args.paths, PathSelection::Train | PathSelection::Both);
    let run_fused = matches!(args.paths, PathSelection::Fused | PathSelection::Both);

    let mut train_result = None;
    let mut fused_result = None;
    pool.install(|| {
        if run_train {
            train_result = Some(time_laps(args.warmup, args.iters, || {
                pks_forward_train(&input, &weights).expect("train forward")
            }));
        }
        if run_fused {
            fused_result = Some(time_laps(args.warmup, args.iters, || {
                fused.gate_forward(&input).expect("fused forward")
            }));
        }
    });

    let train_timing = train_result.as_mut().map(|(laps, _)| path_timing(laps));
    let fused_timing = fused_result.as_mut().map(|(laps, _)| path_timing(laps));
    let speedup = match (&train_timing, &fused_timing) {
        (Some(t), Some(f)) if f.median_ns > 0 => Some(t.median_ns as f64 / f.median_ns as f64),
        _ => None,
    };
    let equivalence = match (&train_result, &fused_result) {
        (Some((_, a)), Some((_, b))) => {
            let (max_abs, peak) = output_discrepancy(a, b)?;
            let max_rel = if peak > 0.0 { max_abs / peak } else { 0.0 };
            let tol = Tolerance::default();
            Some(EquivalenceOut {
                max_abs,
                max_rel,
                pass: max_abs <= tol.abs && max_rel <= tol.rel,
            })
        }
        _ => None,
    };

    let report = Report {
        mode: "bench",
        config: ConfigDescriptor::from_pks(&weights.config),
        seed,
        shape: [shape.0, shape.1, shape.2, shape.3],
        trials: 1,
        tolerance: Tolerance::default().into(),
        invocations: Invocations {
            train: weights.conv_invocations(),
            fused: 1,
        },
        equivalence,
        paths: Some(
            match args.paths {
                PathSelection::Train => "train",
                PathSelection::Fused => "fused",
                PathSelection::Both => "both",
            }
            .to_string(),
        ),
        warmup: Some(args.warmup),
        iters: Some(args.iters),
        threads: Some(args.threads),
        timing: Some(Timing {
            train: train_timing,
            fused: fused_timing,
        }),
        speedup,
    };
    emit(&report.to_json(), &args.out)?;
    Ok(0)
}
