//! Heterogeneous kernel re-parameterization.
//!
//! Folds each branch's batch normalization into its convolution weights,
//! converts axial-strip branches into rank-1 square kernels, scatters every
//! branch into one K_max x K_max depth-wise kernel at center-aligned,
//! dilation-spaced offsets, and sums per-channel biases once per branch. The
//! resulting single depth-wise convolution reproduces the multi-branch sum
//! exactly (up to f32 reassociation), replacing M-plus branch launches with
//! one.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::init;
use crate::pks::{pks_forward_train, BranchWeights, PksWeights, SpatialGate};
use crate::tensor::{
    depthwise_conv, elementwise, pointwise_conv, BatchNormParams, BinaryOp, DepthwiseWeights,
    PointwiseWeights, Tensor4,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The fused single-kernel form: one C x 1 x K_max x K_max depth-wise weight
/// block plus a per-channel bias, fully determined by the source weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedKernel {
    c: usize,
    k_max: usize,
    w_star: Vec<f32>,
    b_star: Vec<f32>,
}

impl FusedKernel {
    pub fn zeros(c: usize, k_max: usize) -> Result<Self> {
        if k_max == 0 || k_max.is_multiple_of(2) {
            return Err(Error::EvenKernel {
                kh: k_max,
                kw: k_max,
            });
        }
        if c == 0 {
            return Err(Error::Config("fused kernel needs c >= 1".into()));
        }
        Ok(Self {
            c,
            k_max,
            w_star: vec![0.0; c * k_max * k_max],
            b_star: vec![0.0; c],
        })
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn w_star(&self) -> &[f32] {
        &self.w_star
    }

    pub fn w_star_mut(&mut self) -> &mut [f32] {
        &mut self.w_star
    }

    pub fn b_star(&self) -> &[f32] {
        &self.b_star
    }

    pub fn tap(&self, c: usize, i: usize, j: usize) -> f32 {
        self.w_star[(c * self.k_max + i) * self.k_max + j]
    }

    /// View as ordinary depth-wise weights (dilation 1, bias attached).
    pub fn to_depthwise(&self) -> DepthwiseWeights {
        DepthwiseWeights::new(
            self.c,
            self.k_max,
            self.k_max,
            1,
            1,
            self.w_star.clone(),
            Some(self.b_star.clone()),
        )
        .expect("fused kernel dims are valid by construction")
    }
}

/// Absorbs inference-mode BN into the preceding bias-free depth-wise conv:
/// scales each channel's taps by gamma / sqrt(var + eps) and emits the bias
/// beta - mean * gamma / sqrt(var + eps).
pub fn fuse_conv_bn(w: &DepthwiseWeights, bn: &BatchNormParams) -> Result<DepthwiseWeights> {
    if w.c != bn.channels() {
        return Err(Error::ChannelMismatch {
            expected: w.c,
            got: bn.channels(),
        });
    }
    if w.bias.is_some() {
        return Err(Error::Config(
            "conv-BN fusion expects a bias-free training conv".into(),
        ));
    }
    let ktap = w.kh * w.kw;
    let mut weights = vec![0.0f32; w.weights.len()];
    let mut bias = vec![0.0f32; w.c];
    for c in 0..w.c {
        let denom = bn.var[c] + bn.eps;
        if denom <= 0.0 {
            return Err(Error::NegativeVariance {
                channel: c,
                var: bn.var[c],
            });
        }
        let scale = bn.gamma[c] / denom.sqrt();
        for t in 0..ktap {
            weights[c * ktap + t] = w.weights[c * ktap + t] * scale;
        }
        bias[c] = bn.beta[c] - bn.mean[c] * scale;
    }
    DepthwiseWeights::new(
        w.c,
        w.kh,
        w.kw,
        w.dilation_h,
        w.dilation_w,
        weights,
        Some(bias),
    )
}

/// Adds a fused square branch into the accumulator: tap (i, j) lands at
/// center + (i - k/2) * d per axis, and the branch bias is added once per
/// channel.
pub fn scatter_square(acc: &mut FusedKernel, w_hat: &DepthwiseWeights) -> Result<()> {
    if w_hat.c != acc.c {
        return Err(Error::ChannelMismatch {
            expected: acc.c,
            got: w_hat.c,
        });
    }
    if w_hat.kh != w_hat.kw || w_hat.dilation_h != w_hat.dilation_w {
        return Err(Error::Config(
            "scatter expects a square kernel with uniform dilation".into(),
        ));
    }
    let (k, d) = (w_hat.kh, w_hat.dilation_h);
    let span = d * (k - 1) + 1;
    if span > acc.k_max {
        return Err(Error::SpanOverflow {
            span,
            k_max: acc.k_max,
        });
    }
    let c0 = acc.k_max / 2;
    let c1 = k / 2;
    let km = acc.k_max;
    for c in 0..acc.c {
        let kern = w_hat.kernel(c);
        for i in 0..k {
            let hi = c0 + i * d - c1 * d; // c0 + (i - c1) * d, kept in usize
            for j in 0..k {
                let wj = c0 + j * d - c1 * d;
                acc.w_star[(c * km + hi) * km + wj] += kern[i * k + j];
            }
        }
    }
    if let Some(b) = &w_hat.bias {
        for (acc_b, &v) in acc.b_star.iter_mut().zip(b) {
            *acc_b += v;
        }
    }
    Ok(())
}

/// Converts fused axial factors into the equivalent rank-1 k x k kernel:
/// out[c, i, j] = col[c, i] * row[c, j], carrying the column factor's bias.
/// BN must already be folded into the k x 1 column factor; the 1 x k row
/// factor stays bias-free.
pub fn axial_outer_product(
    w_kx1: &DepthwiseWeights,
    w_1xk: &DepthwiseWeights,
) -> Result<DepthwiseWeights> {
    if w_kx1.c != w_1xk.c {
        return Err(Error::ChannelMismatch {
            expected: w_kx1.c,
            got: w_1xk.c,
        });
    }
    if w_kx1.kw != 1 || w_1xk.kh != 1 || w_kx1.kh != w_1xk.kw {
        return Err(Error::Config(format!(
            "outer product expects kx1 and 1xk factors with matching k, got {}x{} and {}x{}",
            w_kx1.kh, w_kx1.kw, w_1xk.kh, w_1xk.kw
        )));
    }
    if w_1xk.bias.is_some() {
        return Err(Error::Config(
            "the 1xk factor must be bias-free; a bias there breaks rank-1 equivalence".into(),
        ));
    }
    let (c, k) = (w_kx1.c, w_kx1.kh);
    let mut weights = vec![0.0f32; c * k * k];
    for ch in 0..c {
        let col = w_kx1.kernel(ch);
        let row = w_1xk.kernel(ch);
        for i in 0..k {
            for j in 0..k {
                weights[(ch * k + i) * k + j] = col[i] * row[j];
            }
        }
    }
    DepthwiseWeights::new(c, k, k, 1, 1, weights, w_kx1.bias.clone())
}

/// Re-parameterizes every branch of a PKS module into one fused kernel.
/// Branches are processed in config order; W_star accumulates scattered taps
/// and b_star accumulates one fused bias per branch.
pub fn hkr_reparameterize(w: &PksWeights) -> Result<FusedKernel> {
    w.validate()?;
    let mut fused = FusedKernel::zeros(w.config.channels, w.config.k_max())?;
    for br in &w.branches {
        match &br.weights {
            BranchWeights::Axial { row, col } => {
                let col_hat = fuse_conv_bn(col, &br.bn)?;
                let square = axial_outer_product(&col_hat, row)?;
                scatter_square(&mut fused, &square)?;
            }
            BranchWeights::Square(k) => {
                let w_hat = fuse_conv_bn(k, &br.bn)?;
                scatter_square(&mut fused, &w_hat)?;
            }
        }
    }
    Ok(fused)
}

/// Inference-time weights: the PKS module with its branch bank collapsed into
/// a single depth-wise kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedPksWeights {
    pub conv0: DepthwiseWeights,
    pub kernel: FusedKernel,
    pub conv1: PointwiseWeights,
}

/// Fuses a training-form PKS module for deployment.
pub fn fuse_pks(w: &PksWeights) -> Result<FusedPksWeights> {
    Ok(FusedPksWeights {
        conv0: w.conv0.clone(),
        kernel: hkr_reparameterize(w)?,
        conv1: w.conv1.clone(),
    })
}

/// Inference-time forward: one depth-wise launch replaces the branch bank.
pub fn pks_forward_fused(
    x: &Tensor4,
    conv0: &DepthwiseWeights,
    kernel: &FusedKernel,
    conv1: &PointwiseWeights,
) -> Result<Tensor4> {
    let local = depthwise_conv(x, conv0)?;
    let summed = depthwise_conv(&local, &kernel.to_depthwise())?;
    let attn = pointwise_conv(&summed, conv1)?;
    elementwise(x, &attn, BinaryOp::Mul)
}

impl SpatialGate for FusedPksWeights {
    fn gate_forward(&self, x: &Tensor4) -> Result<Tensor4> {
        pks_forward_fused(x, &self.conv0, &self.kernel, &self.conv1)
    }

    fn conv_invocations(&self) -> usize {
        1
    }
}

/// Pass thresholds for the train/fused comparison. The defaults cover f32
/// reassociation over up-to-361-tap kernels on unit-scale data; they are not
/// mathematical slack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerance {
    pub abs: f32,
    pub rel: f32,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs: 1e-4,
            rel: 1e-3,
        }
    }
}

/// Outcome of a train-vs-fused comparison. `max_rel` is the largest per-trial
/// ratio of peak absolute discrepancy to peak output magnitude (0 when both
/// paths emit all zeros).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub trials: usize,
    pub max_abs: f32,
    pub max_rel: f32,
    pub pass: bool,
}

/// Peak absolute discrepancy and peak magnitude between two same-shape tensors.
pub fn output_discrepancy(a: &Tensor4, b: &Tensor4) -> Result<(f32, f32)> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    let mut max_abs = 0.0f32;
    let mut peak = 0.0f32;
    for (&u, &v) in a.data().iter().zip(b.data()) {
        max_abs = max_abs.max((u - v).abs());
        peak = peak.max(u.abs()).max(v.abs());
    }
    Ok((max_abs, peak))
}

/// Runs the training and fused paths on `trials` seeded unit-scale random
/// inputs and reports the worst discrepancy.
pub fn hkr_equivalence_check(
    w: &PksWeights,
    trials: usize,
    shape: (usize, usize, usize, usize),
    seed: u64,
    tol: Tolerance,
) -> Result<EquivalenceReport> {
    if trials == 0 {
        return Err(Error::Config("equivalence check needs trials >= 1".into()));
    }
    let fused = fuse_pks(w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_abs = 0.0f32;
    let mut max_rel = 0.0f32;
    for _ in 0..trials {
        let x = init::random_tensor(shape.0, shape.1, shape.2, shape.3, &mut rng)?;
        let train = pks_forward_train(&x, w)?;
        let inference = fused.gate_forward(&x)?;
        let (abs, peak) = output_discrepancy(&train, &inference)?;
        max_abs = max_abs.max(abs);
        if peak > 0.0 {
            max_rel = max_rel.max(abs / peak);
        }
    }
    Ok(EquivalenceReport {
        trials,
        max_abs,
        max_rel,
        pass: max_abs <= tol.abs && max_rel <= tol.rel,
    })
}
