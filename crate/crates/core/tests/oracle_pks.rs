//! Gate-module and block forwards against straight-line composition oracles.

mod common;

use common::{naive_batchnorm, naive_pks_forward, naive_pointwise};
use pkv2_core::init;
use pkv2_core::pks::{
    block_forward, pks_block_forward, pks_forward_train, PksConfig,
};
use pkv2_core::pks::PksModuleSpec;
use pkv2_core::tensor::{gelu_scalar, Tensor4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn default_five_branch_forward_is_bit_identical_to_straight_line_oracle() {
    let cfg = PksConfig::with_default_branches(8);
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let w = init::random_pks_weights(&cfg, &mut rng).unwrap();
    let x = init::random_tensor(1, 8, 16, 16, &mut rng).unwrap();
    let got = pks_forward_train(&x, &w).unwrap();
    let want = naive_pks_forward(&x, &w);
    assert_eq!(got.data(), want.data(), "train forward drifted from oracle");
}

#[test]
fn pks_block_matches_primitive_composition_oracle() {
    let c = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    let block = init::random_block_weights(c, 4, &PksModuleSpec::default(), &mut rng).unwrap();
    let x = init::random_tensor(1, c, 10, 10, &mut rng).unwrap();

    let got = pks_block_forward(&x, &block.pks_block).unwrap();

    // independent composition: proj1 -> gelu -> straight-line gate -> proj2 -> + x
    let t = naive_pointwise(&x, &block.pks_block.proj1);
    let t = Tensor4::new(
        t.n(),
        t.c(),
        t.h(),
        t.w(),
        t.data().iter().map(|&v| gelu_scalar(v)).collect(),
    )
    .unwrap();
    let t = naive_pks_forward(&t, &block.pks_block.gate);
    let t = naive_pointwise(&t, &block.pks_block.proj2);
    let want: Vec<f32> = t.data().iter().zip(x.data()).map(|(&a, &b)| a + b).collect();

    assert_eq!(got.data(), &want[..], "block forward drifted from oracle");
}

#[test]
fn full_block_matches_primitive_composition_oracle() {
    let c = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let block = init::random_block_weights(c, 4, &PksModuleSpec::default(), &mut rng).unwrap();
    let x = init::random_tensor(1, c, 8, 8, &mut rng).unwrap();

    let got = block_forward(&x, &block).unwrap();

    let y = {
        let normed = naive_batchnorm(&x, &block.norm1);
        let t = naive_pointwise(&normed, &block.pks_block.proj1);
        let t = Tensor4::new(
            t.n(),
            t.c(),
            t.h(),
            t.w(),
            t.data().iter().map(|&v| gelu_scalar(v)).collect(),
        )
        .unwrap();
        let t = naive_pks_forward(&t, &block.pks_block.gate);
        let t = naive_pointwise(&t, &block.pks_block.proj2);
        let blocked: Vec<f32> = t
            .data()
            .iter()
            .zip(normed.data())
            .map(|(&a, &b)| a + b)
            .collect();
        blocked
    };
    let plane = 8 * 8;
    let x1: Vec<f32> = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v + block.ls1[(i / plane) % c] * y[i])
        .collect();
    let x1t = Tensor4::new(1, c, 8, 8, x1.clone()).unwrap();
    let z = {
        let normed = naive_batchnorm(&x1t, &block.norm2);
        let t = naive_pointwise(&normed, &block.ffn.fc1);
        let t = Tensor4::new(
            t.n(),
            t.c(),
            t.h(),
            t.w(),
            t.data().iter().map(|&v| gelu_scalar(v)).collect(),
        )
        .unwrap();
        naive_pointwise(&t, &block.ffn.fc2)
    };
    let want: Vec<f32> = x1
        .iter()
        .enumerate()
        .map(|(i, &v)| v + block.ls2[(i / plane) % c] * z.data()[i])
        .collect();

    assert_eq!(got.data(), &want[..], "two-residual block drifted from oracle");
}

#[test]
fn spatial_dims_are_preserved_through_every_forward() {
    let cfg = PksConfig::with_default_branches(3);
    let mut rng = ChaCha8Rng::seed_from_u64(203);
    let w = init::random_pks_weights(&cfg, &mut rng).unwrap();
    for (h, wd) in [(5, 9), (19, 19), (7, 31)] {
        let x = init::random_tensor(1, 3, h, wd, &mut rng).unwrap();
        assert_eq!(pks_forward_train(&x, &w).unwrap().dims(), (1, 3, h, wd));
    }
}
