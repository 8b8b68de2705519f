//! `pkv2 shapes`: runs a backbone variant forward and reports the per-stage
//! feature shapes.

use std::path::PathBuf;

use anyhow::{anyhow, Result};
use clap::Args;
use serde::Serialize;

use pkv2_core::backbone::{backbone_forward, count_flops, count_params, VariantConfig};
use pkv2_core::init;
use pkv2_core::tensor::Tensor4;

use crate::config::parse_shape;

use super::emit;

#[derive(Debug, Args)]
pub struct ShapesArgs {
    /// Backbone variant: t/tiny or s/small
    #[arg(long)]
    pub variant: String,

    /// Input tensor shape, NxCxHxW (H and W divisible by 32)
    #[arg(long, default_value = "1x3x64x64")]
    pub shape: String,

    /// Write the JSON report here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ShapesReport {
    variant: String,
    input: [usize; 4],
    stages: Vec<[usize; 4]>,
    params: u64,
    flops: u64,
}

pub fn run(args: &ShapesArgs) -> Result<u8> {
    let cfg = VariantConfig::by_name(&args.variant)
        .ok_or_else(|| anyhow!("unknown variant '{}'; expected t or s", args.variant))?;
    let shape = parse_shape(&args.shape)?;
    let weights = init::zero_backbone_weights(&cfg)?;
    let x = Tensor4::zeros(shape.0, shape.1, shape.2, shape.3)?;
    let out = backbone_forward(&x, &cfg, &weights)?;
    let report = ShapesReport {
        variant: args.variant.to_ascii_lowercase(),
        input: [shape.0, shape.1, shape.2, shape.3],
        stages: out
            .shapes()
            .into_iter()
            .map(|(n, c, h, w)| [n, c, h, w])
            .collect(),
        params: count_params(&cfg),
        flops: count_flops(&cfg, shape.2, shape.3),
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    emit(&text, &args.out)?;
    Ok(0)
}
