//! Seeded, deterministic weight and input generators used by the verification
//! paths and the CLI. All draws come from a caller-supplied RNG (the CLI uses
//! ChaCha8 seeded from `--seed`), and the draw order is fixed:
//!
//! * PKS module: conv0 weights; then per branch in config order the kernel
//!   taps (axial: 1xk row factor first, then kx1 column factor) followed by
//!   its BN arrays (gamma, beta, mean, var); then conv1 weights and bias.
//! * Block: norm1, proj1 (w, b), the gate module as above, proj2 (w, b),
//!   ls1, norm2, ffn fc1 (w, b), fc2 (w, b), ls2.
//! * Backbone: stages in order; per stage the patch embedding then its blocks.
//!
//! Module-level verification uses uniform [-0.5, 0.5] kernel taps and wide BN
//! statistics (gamma in [0.5, 1.5], beta in [-0.5, 0.5], mean in [-1, 1],
//! var in [0.5, 2], eps = 1e-5).
//!
//! Backbone generation must hold activations near unit scale through deep
//! compositions: the spatial gate is multiplicative and inference-mode BN is
//! a fixed affine, so any sustained growth compounds quadratically per block.
//! Backbone draws therefore scale taps by fan-in, divide each gate's fusion
//! 1x1 by sqrt(branch count), divide each residual output projection by 8,
//! and keep BN statistics in a narrow band around the identity (gamma and var
//! in [0.9, 1.1], beta and mean in [-0.1, 0.1]) that still exercises every
//! fusion term.

use rand::Rng;

use crate::backbone::{BackboneWeights, PatchEmbedWeights, StageWeights, VariantConfig};
use crate::error::Result;
use crate::pks::{
    BlockWeights, BranchKind, BranchWeights, FfnWeights, PksBlockWeights, PksBranch, PksConfig,
    PksModuleSpec, PksWeights,
};
use crate::tensor::{
    BatchNormParams, ConvWeights, DepthwiseWeights, PointwiseWeights, Tensor4, BN_EPS,
};

/// Unit-scale random tensor with elements uniform in [-1, 1).
pub fn random_tensor<R: Rng>(n: usize, c: usize, h: usize, w: usize, rng: &mut R) -> Result<Tensor4> {
    Tensor4::new(n, c, h, w, uniform(rng, n * c * h * w, -1.0, 1.0))
}

fn uniform<R: Rng>(rng: &mut R, len: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..len).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Fan-in-scaled uniform taps: [-sqrt(3/fan_in), sqrt(3/fan_in)), unit output
/// variance for unit-variance inputs.
fn fan_in_uniform<R: Rng>(rng: &mut R, len: usize, fan_in: usize) -> Vec<f32> {
    let bound = (3.0 / fan_in as f32).sqrt();
    uniform(rng, len, -bound, bound)
}

fn random_bn<R: Rng>(c: usize, rng: &mut R) -> BatchNormParams {
    let gamma = uniform(rng, c, 0.5, 1.5);
    let beta = uniform(rng, c, -0.5, 0.5);
    let mean = uniform(rng, c, -1.0, 1.0);
    let var = uniform(rng, c, 0.5, 2.0);
    BatchNormParams::new(gamma, beta, mean, var, BN_EPS).expect("valid ranges")
}

fn mild_bn<R: Rng>(c: usize, rng: &mut R) -> BatchNormParams {
    let gamma = uniform(rng, c, 0.9, 1.1);
    let beta = uniform(rng, c, -0.1, 0.1);
    let mean = uniform(rng, c, -0.1, 0.1);
    let var = uniform(rng, c, 0.9, 1.1);
    BatchNormParams::new(gamma, beta, mean, var, BN_EPS).expect("valid ranges")
}

#[derive(Clone, Copy)]
enum TapScale {
    /// Uniform [-0.5, 0.5) with wide BN: the module-level verification
    /// distribution.
    Verification,
    /// Fan-in-scaled taps with near-identity BN: keeps deep compositions near
    /// unit scale.
    FanIn,
}

fn taps<R: Rng>(rng: &mut R, len: usize, fan_in: usize, scale: TapScale) -> Vec<f32> {
    match scale {
        TapScale::Verification => uniform(rng, len, -0.5, 0.5),
        TapScale::FanIn => fan_in_uniform(rng, len, fan_in),
    }
}

fn bn_for<R: Rng>(c: usize, rng: &mut R, scale: TapScale) -> BatchNormParams {
    match scale {
        TapScale::Verification => random_bn(c, rng),
        TapScale::FanIn => mild_bn(c, rng),
    }
}

fn pks_weights_with<R: Rng>(cfg: &PksConfig, rng: &mut R, scale: TapScale) -> Result<PksWeights> {
    cfg.validate()?;
    let c = cfg.channels;
    let conv0 = DepthwiseWeights::square(
        c,
        cfg.k_s,
        1,
        taps(rng, c * cfg.k_s * cfg.k_s, cfg.k_s * cfg.k_s, scale),
    )?;
    let mut branches = Vec::with_capacity(cfg.branches.len());
    for spec in &cfg.branches {
        let weights = match spec.kind {
            BranchKind::AxialStrip => {
                let row = DepthwiseWeights::new(
                    c,
                    1,
                    spec.k,
                    1,
                    1,
                    taps(rng, c * spec.k, spec.k, scale),
                    None,
                )?;
                let col = DepthwiseWeights::new(
                    c,
                    spec.k,
                    1,
                    1,
                    1,
                    taps(rng, c * spec.k, spec.k, scale),
                    None,
                )?;
                BranchWeights::Axial { row, col }
            }
            BranchKind::SparseSquare | BranchKind::DenseSquare => BranchWeights::Square(
                DepthwiseWeights::square(
                    c,
                    spec.k,
                    spec.d,
                    taps(rng, c * spec.k * spec.k, spec.k * spec.k, scale),
                )?,
            ),
        };
        branches.push(PksBranch {
            spec: *spec,
            weights,
            bn: bn_for(c, rng, scale),
        });
    }
    let conv1 = PointwiseWeights::new(
        c,
        c,
        taps(rng, c * c, c, scale),
        Some(uniform(rng, c, -0.5, 0.5)),
    )?;
    Ok(PksWeights {
        config: cfg.clone(),
        conv0,
        branches,
        conv1,
    })
}

/// Seeded random PKS weights with the module-verification distribution.
pub fn random_pks_weights<R: Rng>(cfg: &PksConfig, rng: &mut R) -> Result<PksWeights> {
    pks_weights_with(cfg, rng, TapScale::Verification)
}

/// All-zero kernels with exact-identity BN; the gate and therefore the module
/// output are exactly zero.
pub fn zero_pks_weights(cfg: &PksConfig) -> Result<PksWeights> {
    cfg.validate()?;
    let c = cfg.channels;
    let conv0 = DepthwiseWeights::square(c, cfg.k_s, 1, vec![0.0; c * cfg.k_s * cfg.k_s])?;
    let mut branches = Vec::with_capacity(cfg.branches.len());
    for spec in &cfg.branches {
        let weights = match spec.kind {
            BranchKind::AxialStrip => BranchWeights::Axial {
                row: DepthwiseWeights::new(c, 1, spec.k, 1, 1, vec![0.0; c * spec.k], None)?,
                col: DepthwiseWeights::new(c, spec.k, 1, 1, 1, vec![0.0; c * spec.k], None)?,
            },
            _ => BranchWeights::Square(DepthwiseWeights::square(
                c,
                spec.k,
                spec.d,
                vec![0.0; c * spec.k * spec.k],
            )?),
        };
        branches.push(PksBranch {
            spec: *spec,
            weights,
            bn: BatchNormParams::identity(c),
        });
    }
    let conv1 = PointwiseWeights::new(c, c, vec![0.0; c * c], Some(vec![0.0; c]))?;
    Ok(PksWeights {
        config: cfg.clone(),
        conv0,
        branches,
        conv1,
    })
}

/// Random block weights around a fan-in-scaled PKS gate. Layer scales are 1.
pub fn random_block_weights<R: Rng>(
    channels: usize,
    ffn_ratio: usize,
    spec: &PksModuleSpec,
    rng: &mut R,
) -> Result<BlockWeights<PksWeights>> {
    let c = channels;
    let hidden = ffn_ratio * c;
    let norm1 = mild_bn(c, rng);
    let proj1 = PointwiseWeights::new(
        c,
        c,
        fan_in_uniform(rng, c * c, c),
        Some(uniform(rng, c, -0.1, 0.1)),
    )?;
    let mut gate = pks_weights_with(&PksConfig::from_spec(c, spec), rng, TapScale::FanIn)?;
    let branch_damp = 1.0 / (gate.config.branch_count() as f32).sqrt();
    gate.conv1.weights.iter_mut().for_each(|v| *v *= branch_damp);
    let residual_damp = 0.125;
    let mut proj2 = PointwiseWeights::new(
        c,
        c,
        fan_in_uniform(rng, c * c, c),
        Some(uniform(rng, c, -0.1, 0.1)),
    )?;
    proj2.weights.iter_mut().for_each(|v| *v *= residual_damp);
    let ls1 = vec![1.0; c];
    let norm2 = mild_bn(c, rng);
    let fc1 = PointwiseWeights::new(
        hidden,
        c,
        fan_in_uniform(rng, hidden * c, c),
        Some(uniform(rng, hidden, -0.1, 0.1)),
    )?;
    let mut fc2 = PointwiseWeights::new(
        c,
        hidden,
        fan_in_uniform(rng, c * hidden, hidden),
        Some(uniform(rng, c, -0.1, 0.1)),
    )?;
    fc2.weights.iter_mut().for_each(|v| *v *= residual_damp);
    let ls2 = vec![1.0; c];
    Ok(BlockWeights {
        norm1,
        pks_block: PksBlockWeights { proj1, gate, proj2 },
        ls1,
        norm2,
        ffn: FfnWeights { fc1, fc2 },
        ls2,
    })
}

fn zero_block_weights(
    channels: usize,
    ffn_ratio: usize,
    spec: &PksModuleSpec,
) -> Result<BlockWeights<PksWeights>> {
    let c = channels;
    let hidden = ffn_ratio * c;
    Ok(BlockWeights {
        norm1: BatchNormParams::identity(c),
        pks_block: PksBlockWeights {
            proj1: PointwiseWeights::new(c, c, vec![0.0; c * c], Some(vec![0.0; c]))?,
            gate: zero_pks_weights(&PksConfig::from_spec(c, spec))?,
            proj2: PointwiseWeights::new(c, c, vec![0.0; c * c], Some(vec![0.0; c]))?,
        },
        ls1: vec![0.0; c],
        norm2: BatchNormParams::identity(c),
        ffn: FfnWeights {
            fc1: PointwiseWeights::new(hidden, c, vec![0.0; hidden * c], Some(vec![0.0; hidden]))?,
            fc2: PointwiseWeights::new(c, hidden, vec![0.0; c * hidden], Some(vec![0.0; c]))?,
        },
        ls2: vec![0.0; c],
    })
}

fn random_patch_embed<R: Rng>(
    stage: usize,
    cfg: &VariantConfig,
    rng: &mut R,
) -> Result<PatchEmbedWeights> {
    Ok(if stage == 0 {
        let s = cfg.stem_channels;
        let c1 = cfg.channels[0];
        PatchEmbedWeights::Stem {
            conv_in: ConvWeights::new(
                s,
                cfg.in_channels,
                3,
                3,
                fan_in_uniform(rng, s * cfg.in_channels * 9, cfg.in_channels * 9),
                None,
            )?,
            norm_in: mild_bn(s, rng),
            conv_out: ConvWeights::new(c1, s, 3, 3, fan_in_uniform(rng, c1 * s * 9, s * 9), None)?,
            norm_out: mild_bn(c1, rng),
        }
    } else {
        let c_in = cfg.channels[stage - 1];
        let c_out = cfg.channels[stage];
        PatchEmbedWeights::Down {
            conv: ConvWeights::new(
                c_out,
                c_in,
                3,
                3,
                fan_in_uniform(rng, c_out * c_in * 9, c_in * 9),
                None,
            )?,
            norm: mild_bn(c_out, rng),
        }
    })
}

fn zero_patch_embed(stage: usize, cfg: &VariantConfig) -> Result<PatchEmbedWeights> {
    Ok(if stage == 0 {
        let s = cfg.stem_channels;
        let c1 = cfg.channels[0];
        PatchEmbedWeights::Stem {
            conv_in: ConvWeights::new(s, cfg.in_channels, 3, 3, vec![0.0; s * cfg.in_channels * 9], None)?,
            norm_in: BatchNormParams::identity(s),
            conv_out: ConvWeights::new(c1, s, 3, 3, vec![0.0; c1 * s * 9], None)?,
            norm_out: BatchNormParams::identity(c1),
        }
    } else {
        let c_in = cfg.channels[stage - 1];
        let c_out = cfg.channels[stage];
        PatchEmbedWeights::Down {
            conv: ConvWeights::new(c_out, c_in, 3, 3, vec![0.0; c_out * c_in * 9], None)?,
            norm: BatchNormParams::identity(c_out),
        }
    })
}

/// Backbone layer-scale fill. The PKS block carries an inner shortcut, so a
/// unit layer scale makes every block double its input; 0.1 keeps 13-block
/// compositions bounded while leaving each block's contribution visible.
pub const BACKBONE_LAYER_SCALE: f32 = 0.1;

/// Seeded random backbone weights for a variant config.
pub fn random_backbone_weights<R: Rng>(
    cfg: &VariantConfig,
    rng: &mut R,
) -> Result<BackboneWeights<PksWeights>> {
    cfg.validate()?;
    let mut stages = Vec::with_capacity(4);
    for stage in 0..4 {
        let patch_embed = random_patch_embed(stage, cfg, rng)?;
        let blocks = (0..cfg.depths[stage])
            .map(|_| {
                let mut b = random_block_weights(
                    cfg.channels[stage],
                    cfg.ffn_ratio,
                    &cfg.stage_pks[stage],
                    rng,
                )?;
                b.ls1.iter_mut().for_each(|v| *v = BACKBONE_LAYER_SCALE);
                b.ls2.iter_mut().for_each(|v| *v = BACKBONE_LAYER_SCALE);
                Ok(b)
            })
            .collect::<Result<Vec<_>>>()?;
        stages.push(StageWeights {
            patch_embed,
            blocks,
        });
    }
    Ok(BackboneWeights { stages })
}

/// Zero convolutions, identity norms, zero layer scales: every block is the
/// identity map, so each stage output equals its patch-embedding output.
pub fn zero_backbone_weights(cfg: &VariantConfig) -> Result<BackboneWeights<PksWeights>> {
    cfg.validate()?;
    let mut stages = Vec::with_capacity(4);
    for stage in 0..4 {
        let patch_embed = zero_patch_embed(stage, cfg)?;
        let blocks = (0..cfg.depths[stage])
            .map(|_| zero_block_weights(cfg.channels[stage], cfg.ffn_ratio, &cfg.stage_pks[stage]))
            .collect::<Result<Vec<_>>>()?;
        stages.push(StageWeights {
            patch_embed,
            blocks,
        });
    }
    Ok(BackboneWeights { stages })
}
