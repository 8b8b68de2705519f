//! Resolution of `--config` arguments: a preset name, a JSON module
//! description, or a binary weight file (detected by magic).

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use pkv2_core::init;
use pkv2_core::pks::{BranchSpec, PksConfig, PksWeights};

use crate::weightfile::{self, StoredWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    #[default]
    Random,
    Zeros,
}

/// JSON module description. `channels` may be omitted, in which case the
/// channel count comes from `--shape`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PksConfigFile {
    channels: Option<usize>,
    #[serde(default = "default_k_s")]
    k_s: usize,
    branches: Vec<BranchSpec>,
    #[serde(default)]
    init: WeightInit,
}

fn default_k_s() -> usize {
    5
}

/// A `--config` argument resolved as far as possible without knowing the
/// requested tensor shape.
pub enum ModuleSource {
    /// Generate weights for this config at the caller's seed.
    Generate {
        k_s: usize,
        branches: Vec<BranchSpec>,
        channels: Option<usize>,
        init: WeightInit,
    },
    /// Weights came from a file as-is.
    Loaded(Box<PksWeights>),
}

pub fn resolve_module_config(arg: &str) -> Result<ModuleSource> {
    if arg == "pks-default" {
        let d = PksConfig::with_default_branches(1);
        return Ok(ModuleSource::Generate {
            k_s: d.k_s,
            branches: d.branches,
            channels: None,
            init: WeightInit::Random,
        });
    }
    let path = Path::new(arg);
    if !path.exists() {
        bail!("unknown config '{arg}': not a preset (try \"pks-default\") and no such file");
    }
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(weightfile::MAGIC) {
        match weightfile::from_bytes(&bytes)? {
            StoredWeights::Pks(w) => return Ok(ModuleSource::Loaded(Box::new(w))),
            StoredWeights::Backbone { .. } => {
                bail!("weight file {arg} holds a backbone; this command needs a standalone module")
            }
        }
    }
    let file: PksConfigFile = serde_json::from_slice(&bytes)
        .with_context(|| format!("parsing {} as a JSON module config", path.display()))?;
    Ok(ModuleSource::Generate {
        k_s: file.k_s,
        branches: file.branches,
        channels: file.channels,
        init: file.init,
    })
}

/// Materializes module weights for a requested channel count, generating
/// them at `seed` when the source is a config rather than a weight file.
pub fn materialize_module(
    source: ModuleSource,
    shape_channels: usize,
    seed: u64,
) -> Result<PksWeights> {
    match source {
        ModuleSource::Loaded(w) => {
            if w.config.channels != shape_channels {
                bail!(
                    "weight file has {} channels but the requested shape has {}",
                    w.config.channels,
                    shape_channels
                );
            }
            Ok(*w)
        }
        ModuleSource::Generate {
            k_s,
            branches,
            channels,
            init: mode,
        } => {
            if let Some(c) = channels {
                if c != shape_channels {
                    bail!("config fixes {c} channels but the requested shape has {shape_channels}");
                }
            }
            let cfg = PksConfig {
                channels: shape_channels,
                k_s,
                branches,
            };
            cfg.validate().map_err(|e| anyhow!("bad module config: {e}"))?;
            match mode {
                WeightInit::Random => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    Ok(init::random_pks_weights(&cfg, &mut rng)?)
                }
                WeightInit::Zeros => Ok(init::zero_pks_weights(&cfg)?),
            }
        }
    }
}

/// Branch list for coverage analysis, without materializing weights.
pub fn resolve_branches(arg: &str) -> Result<(Vec<BranchSpec>, usize)> {
    let source = resolve_module_config(arg)?;
    let branches = match source {
        ModuleSource::Generate { branches, .. } => branches,
        ModuleSource::Loaded(w) => w.config.branches.clone(),
    };
    let k_max = branches
        .iter()
        .map(BranchSpec::span)
        .max()
        .ok_or_else(|| anyhow!("config has no branches"))?;
    Ok((branches, k_max))
}

/// Parses "NxCxHxW" into dimensions.
pub fn parse_shape(s: &str) -> Result<(usize, usize, usize, usize)> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    if parts.len() != 4 {
        bail!("shape must be NxCxHxW, got '{s}'");
    }
    let dims: Vec<usize> = parts
        .iter()
        .map(|p| p.parse().map_err(|_| anyhow!("bad shape component '{p}'")))
        .collect::<Result<Vec<_>>>()?;
    if dims.contains(&0) {
        bail!("shape dimensions must be >= 1, got '{s}'");
    }
    Ok((dims[0], dims[1], dims[2], dims[3]))
}

/// Seed resolution: explicit flag wins, then PKV2_SEED, then 0.
pub fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("PKV2_SEED") {
        Ok(v) => v
            .parse()
            .map_err(|_| anyhow!("PKV2_SEED must be an unsigned integer, got '{v}'")),
        Err(_) => Ok(0),
    }
}
