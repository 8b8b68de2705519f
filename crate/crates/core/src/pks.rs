//! Poly-kernel scope module: a bank of parallel heterogeneous depth-wise
//! branches (axial-strip, sparse-square, dense-square) whose batch-normalized
//! sum passes through a 1x1 convolution to form a spatial gate that multiplies
//! the input. Also the enclosing residual block structure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    batchnorm_apply, channel_scale, depthwise_conv, elementwise, gelu, pointwise_conv,
    separable_axial_conv, BatchNormParams, BinaryOp, DepthwiseWeights, PointwiseWeights, Tensor4,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    /// 1 x k conv followed by k x 1 conv; equivalent to a rank-1 k x k kernel.
    AxialStrip,
    /// k x k depth-wise conv with dilation > 1.
    SparseSquare,
    /// Ordinary k x k depth-wise conv (dilation 1).
    DenseSquare,
}

fn default_dilation() -> usize {
    1
}

/// Declarative description of one branch: kind, kernel size, dilation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub kind: BranchKind,
    pub k: usize,
    #[serde(default = "default_dilation")]
    pub d: usize,
}

impl BranchSpec {
    pub fn axial(k: usize) -> Self {
        Self {
            kind: BranchKind::AxialStrip,
            k,
            d: 1,
        }
    }

    pub fn sparse(k: usize, d: usize) -> Self {
        Self {
            kind: BranchKind::SparseSquare,
            k,
            d,
        }
    }

    pub fn dense(k: usize) -> Self {
        Self {
            kind: BranchKind::DenseSquare,
            k,
            d: 1,
        }
    }

    /// Effective span: d * (k - 1) + 1. Odd whenever k is odd.
    pub fn span(&self) -> usize {
        self.d * (self.k - 1) + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "branch kernel size must be odd and >= 1, got {}",
                self.k
            )));
        }
        if self.d == 0 {
            return Err(Error::Config("branch dilation must be >= 1".into()));
        }
        match self.kind {
            BranchKind::SparseSquare if self.d <= 1 => Err(Error::Config(
                "sparse-square branches require dilation > 1".into(),
            )),
            BranchKind::AxialStrip | BranchKind::DenseSquare if self.d != 1 => Err(Error::Config(
                "axial-strip and dense-square branches require dilation 1".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Depth-wise conv launches this branch costs at training time.
    pub fn conv_invocations(&self) -> usize {
        match self.kind {
            BranchKind::AxialStrip => 2,
            _ => 1,
        }
    }
}

/// Channel-free description of a PKS module: local kernel size plus the
/// ordered branch list. Shared across backbone stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PksModuleSpec {
    pub k_s: usize,
    pub branches: Vec<BranchSpec>,
}

impl Default for PksModuleSpec {
    fn default() -> Self {
        Self {
            k_s: 5,
            branches: default_branches(),
        }
    }
}

/// The default 5-branch bank: one 19-tap axial strip, three dilation-3 sparse
/// squares (k = 7, 5, 3), one dense 3x3. Yields K_max = 19.
pub fn default_branches() -> Vec<BranchSpec> {
    vec![
        BranchSpec::axial(19),
        BranchSpec::sparse(7, 3),
        BranchSpec::sparse(5, 3),
        BranchSpec::sparse(3, 3),
        BranchSpec::dense(3),
    ]
}

/// Full PKS module configuration for a fixed channel width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PksConfig {
    pub channels: usize,
    pub k_s: usize,
    pub branches: Vec<BranchSpec>,
}

impl PksConfig {
    pub fn with_default_branches(channels: usize) -> Self {
        Self {
            channels,
            k_s: 5,
            branches: default_branches(),
        }
    }

    pub fn from_spec(channels: usize, spec: &PksModuleSpec) -> Self {
        Self {
            channels,
            k_s: spec.k_s,
            branches: spec.branches.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("channels must be >= 1".into()));
        }
        if self.k_s == 0 || self.k_s.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "local kernel size must be odd and >= 1, got {}",
                self.k_s
            )));
        }
        if self.branches.is_empty() {
            return Err(Error::Config("at least one branch is required".into()));
        }
        for b in &self.branches {
            b.validate()?;
        }
        Ok(())
    }

    /// Fused kernel size: the maximum effective span over all branches.
    pub fn k_max(&self) -> usize {
        self.branches.iter().map(|b| b.span()).max().unwrap_or(1)
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    /// Depth-wise launches per gate forward at training time (axial branches
    /// cost two); the fused inference path replaces all of them with one.
    pub fn train_conv_invocations(&self) -> usize {
        self.branches.iter().map(|b| b.conv_invocations()).sum()
    }
}

/// Weights of one branch in training form (no biases; BN carries the affine).
#[derive(Debug, Clone, PartialEq)]
pub enum BranchWeights {
    Axial {
        row: DepthwiseWeights,
        col: DepthwiseWeights,
    },
    Square(DepthwiseWeights),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PksBranch {
    pub spec: BranchSpec,
    pub weights: BranchWeights,
    pub bn: BatchNormParams,
}

/// Training-time weights of a PKS module.
#[derive(Debug, Clone, PartialEq)]
pub struct PksWeights {
    pub config: PksConfig,
    pub conv0: DepthwiseWeights,
    pub branches: Vec<PksBranch>,
    pub conv1: PointwiseWeights,
}

impl PksWeights {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let c = self.config.channels;
        if self.conv0.c != c || self.conv0.kh != self.config.k_s || self.conv0.kw != self.config.k_s
        {
            return Err(Error::Config("conv0 shape does not match config".into()));
        }
        if self.conv0.bias.is_some() {
            return Err(Error::Config("conv0 carries no bias in training form".into()));
        }
        if self.branches.len() != self.config.branches.len() {
            return Err(Error::Config(format!(
                "expected {} branches, got {}",
                self.config.branches.len(),
                self.branches.len()
            )));
        }
        for (i, br) in self.branches.iter().enumerate() {
            if br.spec != self.config.branches[i] {
                return Err(Error::Config(format!("branch {i} spec mismatch")));
            }
            if br.bn.channels() != c {
                return Err(Error::ChannelMismatch {
                    expected: c,
                    got: br.bn.channels(),
                });
            }
            match (&br.weights, br.spec.kind) {
                (BranchWeights::Axial { row, col }, BranchKind::AxialStrip) => {
                    if row.c != c
                        || col.c != c
                        || row.kh != 1
                        || row.kw != br.spec.k
                        || col.kh != br.spec.k
                        || col.kw != 1
                    {
                        return Err(Error::Config(format!("branch {i} axial factor shape mismatch")));
                    }
                    if row.bias.is_some() || col.bias.is_some() {
                        return Err(Error::Config(format!(
                            "branch {i} axial factors must not carry a bias"
                        )));
                    }
                }
                (BranchWeights::Square(w), BranchKind::SparseSquare | BranchKind::DenseSquare) => {
                    if w.c != c
                        || w.kh != br.spec.k
                        || w.kw != br.spec.k
                        || w.dilation_h != br.spec.d
                        || w.dilation_w != br.spec.d
                    {
                        return Err(Error::Config(format!("branch {i} square kernel shape mismatch")));
                    }
                    if w.bias.is_some() {
                        return Err(Error::Config(format!(
                            "branch {i} square kernel must not carry a bias"
                        )));
                    }
                }
                _ => {
                    return Err(Error::Config(format!(
                        "branch {i} weights do not match its declared kind"
                    )))
                }
            }
        }
        if self.conv1.c_in != c || self.conv1.c_out != c {
            return Err(Error::Config("conv1 must be channels x channels".into()));
        }
        if self.conv1.bias.is_none() {
            return Err(Error::Config("conv1 requires a bias".into()));
        }
        Ok(())
    }
}

/// Training-time forward of the PKS module: local conv, branch bank, per-branch
/// BN summed in branch order, 1x1 fusion, then elementwise gating of the input.
pub fn pks_forward_train(x: &Tensor4, w: &PksWeights) -> Result<Tensor4> {
    if x.c() != w.config.channels {
        return Err(Error::ChannelMismatch {
            expected: w.config.channels,
            got: x.c(),
        });
    }
    let local = depthwise_conv(x, &w.conv0)?;
    let mut gate: Option<Tensor4> = None;
    for br in &w.branches {
        let z = match &br.weights {
            BranchWeights::Axial { row, col } => separable_axial_conv(&local, row, col)?,
            BranchWeights::Square(k) => depthwise_conv(&local, k)?,
        };
        let zn = batchnorm_apply(&z, &br.bn)?;
        gate = Some(match gate {
            None => zn,
            Some(acc) => elementwise(&acc, &zn, BinaryOp::Add)?,
        });
    }
    let summed = gate.ok_or_else(|| Error::Config("at least one branch is required".into()))?;
    let attn = pointwise_conv(&summed, &w.conv1)?;
    elementwise(x, &attn, BinaryOp::Mul)
}

/// A spatial gating module: either the multi-branch training form or the
/// single-kernel fused form. Both produce identical outputs up to f32
/// reassociation.
pub trait SpatialGate {
    fn gate_forward(&self, x: &Tensor4) -> Result<Tensor4>;
    /// Depth-wise conv launches inside the branch bank per forward.
    fn conv_invocations(&self) -> usize;
}

impl SpatialGate for PksWeights {
    fn gate_forward(&self, x: &Tensor4) -> Result<Tensor4> {
        pks_forward_train(x, self)
    }

    fn conv_invocations(&self) -> usize {
        self.config.train_conv_invocations()
    }
}

/// Two 1x1 layers with GELU between; hidden width is ffn_ratio * channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnWeights {
    pub fc1: PointwiseWeights,
    pub fc2: PointwiseWeights,
}

pub fn ffn_forward(x: &Tensor4, w: &FfnWeights) -> Result<Tensor4> {
    let t = pointwise_conv(x, &w.fc1)?;
    pointwise_conv(&gelu(&t), &w.fc2)
}

/// PKS block: 1x1 projection, GELU, gate module, 1x1 projection, residual.
#[derive(Debug, Clone, PartialEq)]
pub struct PksBlockWeights<G> {
    pub proj1: PointwiseWeights,
    pub gate: G,
    pub proj2: PointwiseWeights,
}

pub fn pks_block_forward<G: SpatialGate>(x: &Tensor4, w: &PksBlockWeights<G>) -> Result<Tensor4> {
    let t = pointwise_conv(x, &w.proj1)?;
    let t = gelu(&t);
    let t = w.gate.gate_forward(&t)?;
    let t = pointwise_conv(&t, &w.proj2)?;
    elementwise(&t, x, BinaryOp::Add)
}

/// One backbone block: two residual sub-blocks, each normalized and scaled by
/// a per-channel layer-scale vector. Drop-path is identity at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<G> {
    pub norm1: BatchNormParams,
    pub pks_block: PksBlockWeights<G>,
    pub ls1: Vec<f32>,
    pub norm2: BatchNormParams,
    pub ffn: FfnWeights,
    pub ls2: Vec<f32>,
}

pub fn block_forward<G: SpatialGate>(x: &Tensor4, w: &BlockWeights<G>) -> Result<Tensor4> {
    let y = pks_block_forward(&batchnorm_apply(x, &w.norm1)?, &w.pks_block)?;
    let x1 = elementwise(x, &channel_scale(&y, &w.ls1)?, BinaryOp::Add)?;
    let z = ffn_forward(&batchnorm_apply(&x1, &w.norm2)?, &w.ffn)?;
    elementwise(&x1, &channel_scale(&z, &w.ls2)?, BinaryOp::Add)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_config_has_five_branches_and_k_max_19() {
        let cfg = PksConfig::with_default_branches(8);
        cfg.validate().unwrap();
        assert_eq!(cfg.branch_count(), 5);
        assert_eq!(cfg.k_max(), 19);
        assert_eq!(cfg.train_conv_invocations(), 6);
    }

    #[test]
    fn branch_spec_rules_are_enforced() {
        assert!(BranchSpec::sparse(3, 1).validate().is_err());
        assert!(BranchSpec { kind: BranchKind::DenseSquare, k: 3, d: 2 }.validate().is_err());
        assert!(BranchSpec::dense(4).validate().is_err());
        assert!(BranchSpec::sparse(7, 3).validate().is_ok());
        assert_eq!(BranchSpec::sparse(7, 3).span(), 19);
    }

    #[test]
    fn zero_branch_weights_gate_everything_to_zero() {
        let cfg = PksConfig::with_default_branches(4);
        let w = init::zero_pks_weights(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = init::random_tensor(1, 4, 6, 6, &mut rng).unwrap();
        let y = pks_forward_train(&x, &w).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_center_tap_branch_gates_input_by_itself() {
        // conv0 and the lone dense branch are center-tap identities, BN is the
        // exact identity and conv1 is the identity matrix with zero bias, so
        // the gate equals x and the output is x * x.
        let cfg = PksConfig {
            channels: 2,
            k_s: 5,
            branches: vec![BranchSpec::dense(3)],
        };
        let mut conv0 = vec![0.0; 2 * 25];
        conv0[12] = 1.0;
        conv0[25 + 12] = 1.0;
        let mut dense = vec![0.0; 2 * 9];
        dense[4] = 1.0;
        dense[9 + 4] = 1.0;
        let w = PksWeights {
            config: cfg,
            conv0: DepthwiseWeights::square(2, 5, 1, conv0).unwrap(),
            branches: vec![PksBranch {
                spec: BranchSpec::dense(3),
                weights: BranchWeights::Square(DepthwiseWeights::square(2, 3, 1, dense).unwrap()),
                bn: BatchNormParams::identity(2),
            }],
            conv1: PointwiseWeights::new(
                2,
                2,
                vec![1.0, 0.0, 0.0, 1.0],
                Some(vec![0.0, 0.0]),
            )
            .unwrap(),
        };
        w.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = init::random_tensor(1, 2, 5, 5, &mut rng).unwrap();
        let y = pks_forward_train(&x, &w).unwrap();
        for (o, &v) in y.data().iter().zip(x.data()) {
            assert_eq!(*o, v * v);
        }
    }

    #[test]
    fn gate_path_is_homogeneous_in_branch_weights() {
        // With zero BN shift/mean and zero conv1 bias, doubling every branch
        // weight doubles the gate exactly (2.0 is a power of two, so the
        // scaling commutes with f32 arithmetic bit-exactly).
        let cfg = PksConfig::with_default_branches(4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut w = init::random_pks_weights(&cfg, &mut rng).unwrap();
        for br in &mut w.branches {
            br.bn.beta.iter_mut().for_each(|v| *v = 0.0);
            br.bn.mean.iter_mut().for_each(|v| *v = 0.0);
        }
        if let Some(b) = &mut w.conv1.bias {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut w2 = w.clone();
        for br in &mut w2.branches {
            match &mut br.weights {
                BranchWeights::Axial { row, .. } => {
                    // scale only one factor; the composed kernel doubles
                    row.weights.iter_mut().for_each(|v| *v *= 2.0);
                }
                BranchWeights::Square(k) => k.weights.iter_mut().for_each(|v| *v *= 2.0),
            }
        }
        let x = init::random_tensor(1, 4, 8, 8, &mut rng).unwrap();
        let y1 = pks_forward_train(&x, &w).unwrap();
        let y2 = pks_forward_train(&x, &w2).unwrap();
        for (&a, &b) in y1.data().iter().zip(y2.data()) {
            assert_eq!(2.0 * a, b);
        }
    }

    #[test]
    fn block_with_identity_projections_and_unit_gate_is_gelu_plus_input() {
        let c = 3;
        let gate = UnitGate;
        let w = PksBlockWeights {
            proj1: PointwiseWeights::identity(c),
            gate,
            proj2: PointwiseWeights::identity(c),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = init::random_tensor(1, c, 4, 4, &mut rng).unwrap();
        let y = pks_block_forward(&x, &w).unwrap();
        for ((&o, &v), _) in y.data().iter().zip(x.data()).zip(0..) {
            assert_eq!(o, crate::tensor::gelu_scalar(v) + v);
        }
    }

    /// Test gate that passes its input through unchanged (gate of all ones).
    struct UnitGate;

    impl SpatialGate for UnitGate {
        fn gate_forward(&self, x: &Tensor4) -> Result<Tensor4> {
            Ok(x.clone())
        }

        fn conv_invocations(&self) -> usize {
            0
        }
    }

    #[test]
    fn zero_pks_and_zero_proj2_bias_reduce_block_to_shortcut() {
        let cfg = PksConfig::with_default_branches(4);
        let w = PksBlockWeights {
            proj1: PointwiseWeights::identity(4),
            gate: init::zero_pks_weights(&cfg).unwrap(),
            proj2: PointwiseWeights::identity(4),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = init::random_tensor(1, 4, 6, 6, &mut rng).unwrap();
        let y = pks_block_forward(&x, &w).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn identity_norms_and_zeroed_ffn_reduce_block_to_gated_residual() {
        let c = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut w = init::random_block_weights(c, 4, &PksModuleSpec::default(), &mut rng).unwrap();
        w.norm1 = BatchNormParams::identity(c);
        w.norm2 = BatchNormParams::identity(c);
        w.ls1.iter_mut().for_each(|v| *v = 1.0);
        w.ffn.fc2.weights.iter_mut().for_each(|v| *v = 0.0);
        w.ffn.fc2.bias.as_mut().unwrap().iter_mut().for_each(|v| *v = 0.0);
        w.ls2.iter_mut().for_each(|v| *v = 1.0);
        let x = init::random_tensor(1, c, 7, 7, &mut rng).unwrap();
        let got = block_forward(&x, &w).unwrap();
        let want = elementwise(&x, &pks_block_forward(&x, &w.pks_block).unwrap(), BinaryOp::Add).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn zero_layer_scales_make_block_identity() {
        let c = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut w = init::random_block_weights(c, 4, &PksModuleSpec::default(), &mut rng).unwrap();
        w.ls1.iter_mut().for_each(|v| *v = 0.0);
        w.ls2.iter_mut().for_each(|v| *v = 0.0);
        let x = init::random_tensor(1, c, 6, 6, &mut rng).unwrap();
        let y = block_forward(&x, &w).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn branch_order_permutation_leaves_output_nearly_unchanged() {
        let cfg = PksConfig::with_default_branches(4);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let w = init::random_pks_weights(&cfg, &mut rng).unwrap();
        let mut w_rev = w.clone();
        w_rev.branches.reverse();
        w_rev.config.branches.reverse();
        let x = init::random_tensor(1, 4, 8, 8, &mut rng).unwrap();
        let y1 = pks_forward_train(&x, &w).unwrap();
        let y2 = pks_forward_train(&x, &w_rev).unwrap();
        let max = y1
            .data()
            .iter()
            .zip(y2.data())
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max <= 1e-5, "permuted-branch diff {max}");
    }
}
