//! Canonical flat enumeration of every weight array in a module or backbone,
//! in a fixed order with stable names. The CLI's binary weight format and the
//! parameter-count cross-check are both built on this listing. BN epsilons
//! are not part of the listing; they are scalar metadata carried by the
//! container format.

use crate::backbone::{BackboneWeights, PatchEmbedWeights};
use crate::pks::{BlockWeights, BranchWeights, PksWeights};
use crate::tensor::{BatchNormParams, PointwiseWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a [f32],
}

impl<'a> NamedTensor<'a> {
    fn new(name: String, dims: Vec<usize>, data: &'a [f32]) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { name, dims, data }
    }
}

fn push_bn<'a>(out: &mut Vec<NamedTensor<'a>>, prefix: &str, bn: &'a BatchNormParams) {
    let c = bn.channels();
    out.push(NamedTensor::new(format!("{prefix}.gamma"), vec![c], &bn.gamma));
    out.push(NamedTensor::new(format!("{prefix}.beta"), vec![c], &bn.beta));
    out.push(NamedTensor::new(format!("{prefix}.mean"), vec![c], &bn.mean));
    out.push(NamedTensor::new(format!("{prefix}.var"), vec![c], &bn.var));
}

fn push_pointwise<'a>(out: &mut Vec<NamedTensor<'a>>, prefix: &str, pw: &'a PointwiseWeights) {
    out.push(NamedTensor::new(
        format!("{prefix}.w"),
        vec![pw.c_out, pw.c_in],
        &pw.weights,
    ));
    if let Some(b) = &pw.bias {
        out.push(NamedTensor::new(format!("{prefix}.b"), vec![pw.c_out], b));
    }
}

fn push_pks<'a>(out: &mut Vec<NamedTensor<'a>>, prefix: &str, w: &'a PksWeights) {
    out.push(NamedTensor::new(
        format!("{prefix}conv0.w"),
        vec![w.conv0.c, 1, w.conv0.kh, w.conv0.kw],
        &w.conv0.weights,
    ));
    for (i, br) in w.branches.iter().enumerate() {
        match &br.weights {
            BranchWeights::Axial { row, col } => {
                out.push(NamedTensor::new(
                    format!("{prefix}branch{i}.row.w"),
                    vec![row.c, 1, 1, row.kw],
                    &row.weights,
                ));
                out.push(NamedTensor::new(
                    format!("{prefix}branch{i}.col.w"),
                    vec![col.c, 1, col.kh, 1],
                    &col.weights,
                ));
            }
            BranchWeights::Square(k) => {
                out.push(NamedTensor::new(
                    format!("{prefix}branch{i}.w"),
                    vec![k.c, 1, k.kh, k.kw],
                    &k.weights,
                ));
            }
        }
        push_bn(out, &format!("{prefix}branch{i}.bn"), &br.bn);
    }
    push_pointwise(out, &format!("{prefix}conv1"), &w.conv1);
}

/// Flat listing of a standalone PKS module's arrays.
pub fn pks_named_tensors(w: &PksWeights) -> Vec<NamedTensor<'_>> {
    let mut out = Vec::new();
    push_pks(&mut out, "", w);
    out
}

fn push_block<'a>(out: &mut Vec<NamedTensor<'a>>, prefix: &str, b: &'a BlockWeights<PksWeights>) {
    push_bn(out, &format!("{prefix}.norm1"), &b.norm1);
    push_pointwise(out, &format!("{prefix}.proj1"), &b.pks_block.proj1);
    push_pks(out, &format!("{prefix}.pks."), &b.pks_block.gate);
    push_pointwise(out, &format!("{prefix}.proj2"), &b.pks_block.proj2);
    out.push(NamedTensor::new(
        format!("{prefix}.ls1"),
        vec![b.ls1.len()],
        &b.ls1,
    ));
    push_bn(out, &format!("{prefix}.norm2"), &b.norm2);
    push_pointwise(out, &format!("{prefix}.ffn.fc1"), &b.ffn.fc1);
    push_pointwise(out, &format!("{prefix}.ffn.fc2"), &b.ffn.fc2);
    out.push(NamedTensor::new(
        format!("{prefix}.ls2"),
        vec![b.ls2.len()],
        &b.ls2,
    ));
}

/// Flat listing of every array in a training-form backbone, stages in order.
pub fn backbone_named_tensors(w: &BackboneWeights<PksWeights>) -> Vec<NamedTensor<'_>> {
    let mut out = Vec::new();
    for (s, stage) in w.stages.iter().enumerate() {
        match &stage.patch_embed {
            PatchEmbedWeights::Stem {
                conv_in,
                norm_in,
                conv_out,
                norm_out,
            } => {
                out.push(NamedTensor::new(
                    format!("stage{s}.pe.conv_in.w"),
                    vec![conv_in.c_out, conv_in.c_in, conv_in.kh, conv_in.kw],
                    &conv_in.weights,
                ));
                push_bn(&mut out, &format!("stage{s}.pe.norm_in"), norm_in);
                out.push(NamedTensor::new(
                    format!("stage{s}.pe.conv_out.w"),
                    vec![conv_out.c_out, conv_out.c_in, conv_out.kh, conv_out.kw],
                    &conv_out.weights,
                ));
                push_bn(&mut out, &format!("stage{s}.pe.norm_out"), norm_out);
            }
            PatchEmbedWeights::Down { conv, norm } => {
                out.push(NamedTensor::new(
                    format!("stage{s}.pe.conv.w"),
                    vec![conv.c_out, conv.c_in, conv.kh, conv.kw],
                    &conv.weights,
                ));
                push_bn(&mut out, &format!("stage{s}.pe.norm"), norm);
            }
        }
        for (n, block) in stage.blocks.iter().enumerate() {
            push_block(&mut out, &format!("stage{s}.block{n}"), block);
        }
    }
    out
}

/// Total element count across a listing.
pub fn total_elements(tensors: &[NamedTensor<'_>]) -> u64 {
    tensors.iter().map(|t| t.data.len() as u64).sum()
}
