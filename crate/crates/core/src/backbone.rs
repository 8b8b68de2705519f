//! Four-stage hierarchical backbone: each stage is an overlapped, strided
//! patch embedding followed by a run of gated blocks. Stage l emits
//! channels[l] feature planes at 1/2^(l+2) of the input resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hkr::{fuse_pks, FusedPksWeights};
use crate::pks::{
    block_forward, BlockWeights, BranchKind, PksConfig, PksModuleSpec, PksWeights,
    SpatialGate,
};
use crate::tensor::{batchnorm_apply, conv2d, BatchNormParams, ConvWeights, Tensor4};

/// Per-variant architecture description. Presets follow the published
/// tiny/small layouts; everything the reference leaves open (FFN ratio, stem
/// width, per-stage branch sets) is an explicit knob with defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub channels: [usize; 4],
    pub depths: [usize; 4],
    pub ffn_ratio: usize,
    pub stem_channels: usize,
    pub in_channels: usize,
    pub stage_pks: [PksModuleSpec; 4],
}

impl VariantConfig {
    /// Tiny: channels {32, 64, 160, 256}, depths {3, 3, 5, 2}.
    pub fn tiny() -> Self {
        Self::preset([32, 64, 160, 256], [3, 3, 5, 2])
    }

    /// Small: channels {64, 128, 320, 512}, depths {2, 2, 4, 2}.
    pub fn small() -> Self {
        Self::preset([64, 128, 320, 512], [2, 2, 4, 2])
    }

    fn preset(channels: [usize; 4], depths: [usize; 4]) -> Self {
        Self {
            channels,
            depths,
            ffn_ratio: 4,
            stem_channels: channels[0] / 2,
            in_channels: 3,
            stage_pks: std::array::from_fn(|_| PksModuleSpec::default()),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "t" | "tiny" => Some(Self::tiny()),
            "s" | "small" => Some(Self::small()),
            _ => None,
        }
    }

    pub fn pks_config(&self, stage: usize) -> PksConfig {
        PksConfig::from_spec(self.channels[stage], &self.stage_pks[stage])
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.stem_channels == 0 || self.ffn_ratio == 0 {
            return Err(Error::Config(
                "in_channels, stem_channels and ffn_ratio must be >= 1".into(),
            ));
        }
        for stage in 0..4 {
            if self.channels[stage] == 0 || self.depths[stage] == 0 {
                return Err(Error::Config(format!(
                    "stage {stage} needs channels >= 1 and depth >= 1"
                )));
            }
            self.pks_config(stage).validate()?;
        }
        Ok(())
    }
}

/// Stage-entry downsampling weights. Stage 1 uses a two-step stem
/// (in -> stem_channels -> C1, both stride 2) to reach the 1/4 entry
/// resolution; later stages use a single stride-2 conv. Convolutions are
/// bias-free; the following per-channel normalization carries the shift.
#[derive(Debug, Clone, PartialEq)]
pub enum PatchEmbedWeights {
    Stem {
        conv_in: ConvWeights,
        norm_in: BatchNormParams,
        conv_out: ConvWeights,
        norm_out: BatchNormParams,
    },
    Down {
        conv: ConvWeights,
        norm: BatchNormParams,
    },
}

/// Overlapped patch embedding: stride-2 3x3 convolution(s) with zero padding
/// 1, each followed by per-channel normalization. Halves (stem: quarters) the
/// spatial dims, with odd sizes rounded by the conv arithmetic.
pub fn patch_embed(x: &Tensor4, pe: &PatchEmbedWeights) -> Result<Tensor4> {
    match pe {
        PatchEmbedWeights::Stem {
            conv_in,
            norm_in,
            conv_out,
            norm_out,
        } => {
            let t = batchnorm_apply(&conv2d(x, conv_in, 2)?, norm_in)?;
            batchnorm_apply(&conv2d(&t, conv_out, 2)?, norm_out)
        }
        PatchEmbedWeights::Down { conv, norm } => batchnorm_apply(&conv2d(x, conv, 2)?, norm),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageWeights<G> {
    pub patch_embed: PatchEmbedWeights,
    pub blocks: Vec<BlockWeights<G>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneWeights<G> {
    pub stages: Vec<StageWeights<G>>,
}

/// One feature map per stage, shallow to deep.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneOutput {
    pub features: Vec<Tensor4>,
}

impl BackboneOutput {
    pub fn shapes(&self) -> Vec<(usize, usize, usize, usize)> {
        self.features.iter().map(|f| f.dims()).collect()
    }
}

/// Runs all four stages. Requires an RGB-like input with spatial dims
/// divisible by 32 so each stage halves cleanly.
pub fn backbone_forward<G: SpatialGate>(
    x: &Tensor4,
    cfg: &VariantConfig,
    weights: &BackboneWeights<G>,
) -> Result<BackboneOutput> {
    cfg.validate()?;
    if x.c() != cfg.in_channels {
        return Err(Error::ChannelMismatch {
            expected: cfg.in_channels,
            got: x.c(),
        });
    }
    if !x.h().is_multiple_of(32) || !x.w().is_multiple_of(32) {
        return Err(Error::Indivisible {
            required: 32,
            h: x.h(),
            w: x.w(),
        });
    }
    if weights.stages.len() != 4 {
        return Err(Error::Config(format!(
            "backbone needs 4 stages of weights, got {}",
            weights.stages.len()
        )));
    }
    let mut features = Vec::with_capacity(4);
    let mut cur = x.clone();
    for (stage, sw) in weights.stages.iter().enumerate() {
        if sw.blocks.len() != cfg.depths[stage] {
            return Err(Error::Config(format!(
                "stage {stage} expects {} blocks, got {}",
                cfg.depths[stage],
                sw.blocks.len()
            )));
        }
        cur = patch_embed(&cur, &sw.patch_embed)?;
        for block in &sw.blocks {
            cur = block_forward(&cur, block)?;
        }
        features.push(cur.clone());
    }
    Ok(BackboneOutput { features })
}

/// Re-parameterizes every block's branch bank, leaving everything else as-is.
pub fn fuse_backbone(
    weights: &BackboneWeights<PksWeights>,
) -> Result<BackboneWeights<FusedPksWeights>> {
    let mut stages = Vec::with_capacity(weights.stages.len());
    for sw in &weights.stages {
        let blocks = sw
            .blocks
            .iter()
            .map(|b| {
                Ok(BlockWeights {
                    norm1: b.norm1.clone(),
                    pks_block: crate::pks::PksBlockWeights {
                        proj1: b.pks_block.proj1.clone(),
                        gate: fuse_pks(&b.pks_block.gate)?,
                        proj2: b.pks_block.proj2.clone(),
                    },
                    ls1: b.ls1.clone(),
                    norm2: b.norm2.clone(),
                    ffn: b.ffn.clone(),
                    ls2: b.ls2.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        stages.push(StageWeights {
            patch_embed: sw.patch_embed.clone(),
            blocks,
        });
    }
    Ok(BackboneWeights { stages })
}

fn pks_module_params(c: u64, spec: &PksModuleSpec) -> u64 {
    let mut p = c * (spec.k_s * spec.k_s) as u64; // conv0, bias-free
    for b in &spec.branches {
        p += match b.kind {
            BranchKind::AxialStrip => 2 * c * b.k as u64,
            _ => c * (b.k * b.k) as u64,
        };
        p += 4 * c; // per-branch BN: gamma, beta, mean, var
    }
    p + c * c + c // conv1 with bias
}

fn block_params(c: u64, ffn_ratio: u64, spec: &PksModuleSpec) -> u64 {
    let hidden = ffn_ratio * c;
    let norms = 2 * 4 * c;
    let projections = 2 * (c * c + c);
    let ffn = hidden * c + hidden + c * hidden + c;
    let layer_scales = 2 * c;
    norms + projections + pks_module_params(c, spec) + ffn + layer_scales
}

/// Exact parameter count of the constructed training-form backbone: every
/// serialized array, including BN running statistics; equals the flattened
/// weight-vector length by construction.
pub fn count_params(cfg: &VariantConfig) -> u64 {
    let stem = 9 * (cfg.in_channels * cfg.stem_channels) as u64
        + 4 * cfg.stem_channels as u64
        + 9 * (cfg.stem_channels * cfg.channels[0]) as u64
        + 4 * cfg.channels[0] as u64;
    let mut total = stem;
    for stage in 1..4 {
        total += 9 * (cfg.channels[stage - 1] * cfg.channels[stage]) as u64
            + 4 * cfg.channels[stage] as u64;
    }
    for stage in 0..4 {
        total += cfg.depths[stage] as u64
            * block_params(
                cfg.channels[stage] as u64,
                cfg.ffn_ratio as u64,
                &cfg.stage_pks[stage],
            );
    }
    total
}

// FLOP counting convention: a multiply-accumulate is 2 FLOPs; a bias add is
// 1 per output element; inference BN is 3 per element ((x - mean) * scale +
// beta); GELU is 5 per element with erf counted as one operation; elementwise
// add/mul and layer scaling are 1 per element.

fn conv_flops(c_out: u64, c_in: u64, ktaps: u64, out_hw: u64, bias: bool) -> u64 {
    2 * c_out * c_in * ktaps * out_hw + if bias { c_out * out_hw } else { 0 }
}

fn pks_module_flops(c: u64, hw: u64, spec: &PksModuleSpec) -> u64 {
    let mut f = 2 * c * hw * (spec.k_s * spec.k_s) as u64; // conv0
    for b in &spec.branches {
        f += match b.kind {
            BranchKind::AxialStrip => 2 * 2 * c * hw * b.k as u64,
            _ => 2 * c * hw * (b.k * b.k) as u64,
        };
        f += 3 * c * hw; // branch BN
    }
    f += (spec.branches.len() as u64 - 1) * c * hw; // branch sum
    f += conv_flops(c, c, 1, hw, true); // conv1
    f + c * hw // gating multiply
}

fn block_flops(c: u64, hw: u64, ffn_ratio: u64, spec: &PksModuleSpec) -> u64 {
    let hidden = ffn_ratio * c;
    let mut f = 3 * c * hw; // norm1
    f += conv_flops(c, c, 1, hw, true); // proj1
    f += 5 * c * hw; // gelu
    f += pks_module_flops(c, hw, spec);
    f += conv_flops(c, c, 1, hw, true); // proj2
    f += c * hw; // block residual add
    f += 2 * c * hw; // ls1 + residual add
    f += 3 * c * hw; // norm2
    f += conv_flops(hidden, c, 1, hw, true); // fc1
    f += 5 * hidden * hw; // gelu
    f += conv_flops(c, hidden, 1, hw, true); // fc2
    f += 2 * c * hw; // ls2 + residual add
    f
}

/// Deterministic closed-form FLOP count (2 x MACs, biases, normalization and
/// gating included) for the training-form forward at the given input size.
pub fn count_flops(cfg: &VariantConfig, h: usize, w: usize) -> u64 {
    let (mut h, mut w) = (h as u64, w as u64);
    let halve = |v: u64| (v + 2 - 3) / 2 + 1; // 3x3, stride 2, pad 1
    let mut total = 0u64;

    // stem: two stride-2 convs with norms
    let (h1, w1) = (halve(h), halve(w));
    total += conv_flops(cfg.stem_channels as u64, cfg.in_channels as u64, 9, h1 * w1, false);
    total += 3 * cfg.stem_channels as u64 * h1 * w1;
    let (h2, w2) = (halve(h1), halve(w1));
    total += conv_flops(cfg.channels[0] as u64, cfg.stem_channels as u64, 9, h2 * w2, false);
    total += 3 * cfg.channels[0] as u64 * h2 * w2;
    h = h2;
    w = w2;

    for stage in 0..4 {
        if stage > 0 {
            let (nh, nw) = (halve(h), halve(w));
            total += conv_flops(
                cfg.channels[stage] as u64,
                cfg.channels[stage - 1] as u64,
                9,
                nh * nw,
                false,
            );
            total += 3 * cfg.channels[stage] as u64 * nh * nw;
            h = nh;
            w = nw;
        }
        let hw = h * w;
        total += cfg.depths[stage] as u64
            * block_flops(
                cfg.channels[stage] as u64,
                hw,
                cfg.ffn_ratio as u64,
                &cfg.stage_pks[stage],
            );
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init;
    use crate::tensor::PointwiseWeights;

    #[test]
    fn presets_match_published_layouts() {
        let t = VariantConfig::tiny();
        assert_eq!(t.channels, [32, 64, 160, 256]);
        assert_eq!(t.depths, [3, 3, 5, 2]);
        let s = VariantConfig::small();
        assert_eq!(s.channels, [64, 128, 320, 512]);
        assert_eq!(s.depths, [2, 2, 4, 2]);
        t.validate().unwrap();
        s.validate().unwrap();
    }

    #[test]
    fn stem_reduces_a_64px_input_to_16px_at_stage_one_width() {
        let cfg = VariantConfig::tiny();
        let w = init::zero_backbone_weights(&cfg).unwrap();
        let x = Tensor4::zeros(1, 3, 64, 64).unwrap();
        let y = patch_embed(&x, &w.stages[0].patch_embed).unwrap();
        assert_eq!(y.dims(), (1, 32, 16, 16));
    }

    #[test]
    fn later_patch_embeds_halve_spatial_dims() {
        let cfg = VariantConfig::tiny();
        let w = init::zero_backbone_weights(&cfg).unwrap();
        let x = Tensor4::zeros(1, 32, 16, 16).unwrap();
        let y = patch_embed(&x, &w.stages[1].patch_embed).unwrap();
        assert_eq!(y.dims(), (1, 64, 8, 8));
    }

    #[test]
    fn zero_conv_patch_embed_emits_the_norm_shift_constant() {
        let conv = ConvWeights::new(2, 1, 3, 3, vec![0.0; 18], None).unwrap();
        let norm = BatchNormParams::new(
            vec![1.0, 1.0],
            vec![0.25, -0.75],
            vec![0.0, 0.0],
            vec![1.0 - crate::tensor::BN_EPS; 2],
            crate::tensor::BN_EPS,
        )
        .unwrap();
        let pe = PatchEmbedWeights::Down { conv, norm };
        let x = Tensor4::full(1, 1, 8, 8, 3.0).unwrap();
        let y = patch_embed(&x, &pe).unwrap();
        assert!(y.plane(0, 0).iter().all(|&v| v == 0.25));
        assert!(y.plane(0, 1).iter().all(|&v| v == -0.75));
    }

    #[test]
    fn indivisible_input_dims_are_rejected() {
        let cfg = VariantConfig::tiny();
        let w = init::zero_backbone_weights(&cfg).unwrap();
        let x = Tensor4::zeros(1, 3, 48, 64).unwrap();
        assert!(matches!(
            backbone_forward(&x, &cfg, &w),
            Err(Error::Indivisible { required: 32, .. })
        ));
    }

    #[test]
    fn zero_layer_scales_leave_stage_outputs_at_patch_embed_values() {
        let cfg = VariantConfig::tiny();
        let w = init::zero_backbone_weights(&cfg).unwrap();
        let x = Tensor4::zeros(1, 3, 32, 32).unwrap();
        let out = backbone_forward(&x, &cfg, &w).unwrap();
        let mut cur = x;
        for (stage, feature) in out.features.iter().enumerate() {
            cur = patch_embed(&cur, &w.stages[stage].patch_embed).unwrap();
            assert_eq!(feature, &cur, "stage {stage} drifted from its embedding");
        }
    }

    #[test]
    fn param_count_grows_when_any_knob_grows() {
        let base = count_params(&VariantConfig::tiny());
        let mut wider = VariantConfig::tiny();
        wider.ffn_ratio = 5;
        assert!(count_params(&wider) > base);
        let mut deeper = VariantConfig::tiny();
        deeper.depths[2] += 1;
        assert!(count_params(&deeper) > base);
    }

    #[test]
    fn single_pointwise_layer_param_arithmetic() {
        // c_in = 2 -> c_out = 3 with bias: 9 params
        let pw = PointwiseWeights::new(3, 2, vec![0.0; 6], Some(vec![0.0; 3])).unwrap();
        assert_eq!(pw.weights.len() + pw.bias.as_ref().unwrap().len(), 9);
        // depthwise k x k over C channels with bias: C * (k^2 + 1)
        let c = 4;
        let k = 5;
        let dw = crate::tensor::DepthwiseWeights::new(
            c,
            k,
            k,
            1,
            1,
            vec![0.0; c * k * k],
            Some(vec![0.0; c]),
        )
        .unwrap();
        assert_eq!(
            dw.weights.len() + dw.bias.as_ref().unwrap().len(),
            c * (k * k + 1)
        );
    }

    #[test]
    fn flop_count_scales_with_input_area() {
        let cfg = VariantConfig::tiny();
        let f64px = count_flops(&cfg, 64, 64);
        let f128px = count_flops(&cfg, 128, 128);
        assert!(f128px > 3 * f64px && f128px < 5 * f64px);
    }
}
