//! `pkv2 weights`: create, re-serialize, validate, and inspect weight files.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pkv2_core::backbone::VariantConfig;
use pkv2_core::catalog::{backbone_named_tensors, pks_named_tensors, total_elements};
use pkv2_core::init;

use crate::config::{materialize_module, resolve_module_config, resolve_seed, WeightInit};
use crate::weightfile::{self, StoredWeights};

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[command(subcommand)]
    pub action: WeightsAction,
}

#[derive(Debug, Subcommand)]
pub enum WeightsAction {
    /// Generate a seeded deterministic weight file
    Init {
        /// "pks-default", "variant-t", "variant-s", or a JSON module config
        #[arg(long, default_value = "pks-default")]
        config: String,

        /// Channel count for module configs that do not fix one
        #[arg(long, default_value_t = 8)]
        channels: usize,

        #[arg(long)]
        seed: Option<u64>,

        /// Generate all-zero weights instead of seeded random ones
        #[arg(long)]
        zeros: bool,

        #[arg(long)]
        out: PathBuf,
    },
    /// Load a weight file and write it back out (re-serialization)
    Save {
        #[arg(long, visible_alias = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a weight file, validate it, and print a summary
    Load {
        #[arg(long, visible_alias = "in")]
        input: PathBuf,
    },
    /// Print the tensor directory of a weight file
    Dump {
        #[arg(long, visible_alias = "in")]
        input: PathBuf,
    },
}

fn build(config: &str, channels: usize, seed: u64, zeros: bool) -> Result<StoredWeights> {
    if let Some(name) = config.to_ascii_lowercase().strip_prefix("variant-") {
        let Some(variant) = VariantConfig::by_name(name) else {
            bail!("unknown variant '{name}'; expected variant-t or variant-s");
        };
        let weights = if zeros {
            init::zero_backbone_weights(&variant)?
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            init::random_backbone_weights(&variant, &mut rng)?
        };
        return Ok(StoredWeights::Backbone {
            config: variant,
            weights,
        });
    }
    let mut source = resolve_module_config(config)?;
    if zeros {
        if let crate::config::ModuleSource::Generate { init: mode, .. } = &mut source {
            *mode = WeightInit::Zeros;
        }
    }
    let shape_channels = match &source {
        crate::config::ModuleSource::Generate { channels: Some(c), .. } => *c,
        crate::config::ModuleSource::Generate { channels: None, .. } => channels,
        crate::config::ModuleSource::Loaded(w) => w.config.channels,
    };
    Ok(StoredWeights::Pks(materialize_module(
        source,
        shape_channels,
        seed,
    )?))
}

fn summarize(stored: &StoredWeights) -> String {
    match stored {
        StoredWeights::Pks(w) => {
            let tensors = pks_named_tensors(w);
            format!(
                "pks module: {} channels, {} branches, k_max {}, {} tensors, {} params\n",
                w.config.channels,
                w.config.branch_count(),
                w.config.k_max(),
                tensors.len(),
                total_elements(&tensors)
            )
        }
        StoredWeights::Backbone { config, weights } => {
            let tensors = backbone_named_tensors(weights);
            format!(
                "backbone: channels {:?}, depths {:?}, {} tensors, {} params\n",
                config.channels,
                config.depths,
                tensors.len(),
                total_elements(&tensors)
            )
        }
    }
}

pub fn run(args: &WeightsArgs) -> Result<u8> {
    match &args.action {
        WeightsAction::Init {
            config,
            channels,
            seed,
            zeros,
            out,
        } => {
            let seed = resolve_seed(*seed)?;
            let stored = build(config, *channels, seed, *zeros)?;
            weightfile::save(out, &stored)?;
            print!("{}", summarize(&stored));
            Ok(0)
        }
        WeightsAction::Save { input, out } => {
            let stored = weightfile::load(input)?;
            weightfile::save(out, &stored)?;
            print!("{}", summarize(&stored));
            Ok(0)
        }
        WeightsAction::Load { input } => {
            let stored = weightfile::load(input)?;
            print!("{}", summarize(&stored));
            Ok(0)
        }
        WeightsAction::Dump { input } => {
            let bytes = std::fs::read(input)?;
            let meta = weightfile::read_meta(&bytes)?;
            println!(
                "kind {} version {} eps {:e} payload {} bytes",
                meta.kind, meta.version, meta.eps, meta.payload_len
            );
            for e in &meta.entries {
                let dims: Vec<String> = e.dims.iter().map(|d| d.to_string()).collect();
                println!("{:>10}  {:<12} {}", e.offset, dims.join("x"), e.name);
            }
            Ok(0)
        }
    }
}
