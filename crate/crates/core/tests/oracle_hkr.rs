//! Two-path oracles for every re-parameterization step: each fused form is
//! compared against the unfused sequential route it replaces.

mod common;

use common::max_abs_diff;
use pkv2_core::hkr::{
    axial_outer_product, fuse_conv_bn, fuse_pks, hkr_reparameterize, pks_forward_fused,
    scatter_square, FusedKernel,
};
use pkv2_core::init;
use pkv2_core::pks::{
    pks_forward_train, BranchSpec, BranchWeights, PksBranch, PksConfig, PksWeights, SpatialGate,
};
use pkv2_core::rfield::coverage_map;
use pkv2_core::tensor::{
    batchnorm_apply, depthwise_conv, separable_axial_conv, BatchNormParams, DepthwiseWeights,
    PointwiseWeights,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_bn(c: usize, rng: &mut ChaCha8Rng) -> BatchNormParams {
    BatchNormParams::new(
        (0..c).map(|_| rng.gen_range(0.5..1.5)).collect(),
        (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        (0..c).map(|_| rng.gen_range(0.5..2.0)).collect(),
        1e-5,
    )
    .unwrap()
}

#[test]
fn conv_bn_fusion_agrees_with_conv_then_bn() {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let c = 4;
    let x = init::random_tensor(1, c, 9, 9, &mut rng).unwrap();
    for k in [1usize, 3, 5, 7] {
        for d in [1usize, 2, 3] {
            let taps: Vec<f32> = (0..c * k * k).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let w = DepthwiseWeights::square(c, k, d, taps).unwrap();
            let bn = random_bn(c, &mut rng);
            let two_step = batchnorm_apply(&depthwise_conv(&x, &w).unwrap(), &bn).unwrap();
            let fused = depthwise_conv(&x, &fuse_conv_bn(&w, &bn).unwrap()).unwrap();
            let diff = max_abs_diff(&two_step, &fused);
            assert!(diff <= 1e-5, "k={k} d={d}: {diff}");
        }
    }
}

#[test]
fn axial_rank_one_kernel_agrees_with_sequential_path_at_boundaries() {
    // 19-tap factors on a 19x19 input: every output pixel is boundary-affected,
    // which is exactly where zero padding must make the two routes agree.
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    let c = 2;
    let k = 19;
    for _ in 0..10 {
        let row = DepthwiseWeights::new(
            c,
            1,
            k,
            1,
            1,
            (0..c * k).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            None,
        )
        .unwrap();
        let col = DepthwiseWeights::new(
            c,
            k,
            1,
            1,
            1,
            (0..c * k).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            None,
        )
        .unwrap();
        let bn = random_bn(c, &mut rng);
        let x = init::random_tensor(1, c, 19, 19, &mut rng).unwrap();

        let sequential =
            batchnorm_apply(&separable_axial_conv(&x, &row, &col).unwrap(), &bn).unwrap();
        let composed = depthwise_conv(
            &x,
            &axial_outer_product(&fuse_conv_bn(&col, &bn).unwrap(), &row).unwrap(),
        )
        .unwrap();
        let diff = max_abs_diff(&sequential, &composed);
        assert!(diff <= 1e-5, "boundary-dominated case: {diff}");
    }
}

#[test]
fn separable_equals_outer_product_kernel_without_bn() {
    let mut rng = ChaCha8Rng::seed_from_u64(302);
    let c = 3;
    for k in [3usize, 5, 19] {
        let row = DepthwiseWeights::new(
            c,
            1,
            k,
            1,
            1,
            (0..c * k).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            None,
        )
        .unwrap();
        let col = DepthwiseWeights::new(
            c,
            k,
            1,
            1,
            1,
            (0..c * k).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            None,
        )
        .unwrap();
        let x = init::random_tensor(1, c, 12, 12, &mut rng).unwrap();
        let sequential = separable_axial_conv(&x, &row, &col).unwrap();
        let composed = depthwise_conv(&x, &axial_outer_product(&col, &row).unwrap()).unwrap();
        let diff = max_abs_diff(&sequential, &composed);
        assert!(diff <= 1e-5, "k={k}: {diff}");
    }
}

#[test]
fn dilated_conv_equals_conv_with_scattered_dense_kernel() {
    // scattering into a zero K_max x K_max accumulator interleaves exact
    // zeros between the taps, so the two routes accumulate identically
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let c = 2;
    for k in [3usize, 5, 7] {
        for d in [1usize, 2, 3, 4] {
            let taps: Vec<f32> = (0..c * k * k).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let w = DepthwiseWeights::square(c, k, d, taps).unwrap();
            let mut acc = FusedKernel::zeros(c, 29).unwrap();
            scatter_square(&mut acc, &w).unwrap();
            let x = init::random_tensor(1, c, 20, 20, &mut rng).unwrap();
            let dilated = depthwise_conv(&x, &w).unwrap();
            let dense = depthwise_conv(&x, &acc.to_depthwise()).unwrap();
            let diff = max_abs_diff(&dilated, &dense);
            assert!(diff <= 1e-6, "k={k} d={d}: {diff}");
        }
    }
}

#[test]
fn k3_d3_scatter_reproduces_dilated_conv_inside_a_19_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(304);
    let c = 1;
    let w = DepthwiseWeights::square(c, 3, 3, (0..9).map(|_| rng.gen_range(-0.5..0.5)).collect())
        .unwrap();
    let mut acc = FusedKernel::zeros(c, 19).unwrap();
    scatter_square(&mut acc, &w).unwrap();
    let x = init::random_tensor(1, c, 16, 16, &mut rng).unwrap();
    let diff = max_abs_diff(
        &depthwise_conv(&x, &w).unwrap(),
        &depthwise_conv(&x, &acc.to_depthwise()).unwrap(),
    );
    assert!(diff <= 1e-6, "{diff}");
}

#[test]
fn single_identity_branch_fused_path_tracks_train_path() {
    // one dense branch whose kernel is a center-tap identity; after BN fusion
    // the only difference between the paths is scale reassociation
    let mut rng = ChaCha8Rng::seed_from_u64(305);
    let c = 3;
    let cfg = PksConfig {
        channels: c,
        k_s: 5,
        branches: vec![BranchSpec::dense(3)],
    };
    let mut dense = vec![0.0f32; c * 9];
    for ch in 0..c {
        dense[ch * 9 + 4] = 1.0;
    }
    let w = PksWeights {
        config: cfg,
        conv0: DepthwiseWeights::square(c, 5, 1, (0..c * 25).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap(),
        branches: vec![PksBranch {
            spec: BranchSpec::dense(3),
            weights: BranchWeights::Square(DepthwiseWeights::square(c, 3, 1, dense).unwrap()),
            bn: random_bn(c, &mut rng),
        }],
        conv1: PointwiseWeights::new(
            c,
            c,
            (0..c * c).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            Some((0..c).map(|_| rng.gen_range(-0.5..0.5)).collect()),
        )
        .unwrap(),
    };
    let fused = fuse_pks(&w).unwrap();
    let x = init::random_tensor(1, c, 10, 10, &mut rng).unwrap();
    let train = pks_forward_train(&x, &w).unwrap();
    let inference = fused.gate_forward(&x).unwrap();
    let diff = max_abs_diff(&train, &inference);
    assert!(diff <= 1e-6, "{diff}");
}

#[test]
fn fused_forward_free_function_matches_gate_trait_route() {
    let cfg = PksConfig::with_default_branches(4);
    let mut rng = ChaCha8Rng::seed_from_u64(306);
    let w = init::random_pks_weights(&cfg, &mut rng).unwrap();
    let fused = fuse_pks(&w).unwrap();
    let x = init::random_tensor(1, 4, 12, 12, &mut rng).unwrap();
    let a = pks_forward_fused(&x, &fused.conv0, &fused.kernel, &fused.conv1).unwrap();
    let b = fused.gate_forward(&x).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn w_star_support_multiplicity_matches_coverage_map() {
    // count, per cell, how many branches contribute a tap by fusing the
    // default config with all-ones kernels and identity BN; the accumulated
    // tap value at each cell is then exactly the branch multiplicity
    let c = 1;
    let cfg = PksConfig::with_default_branches(c);
    let mut branches = Vec::new();
    for spec in &cfg.branches {
        let weights = match spec.kind {
            pkv2_core::pks::BranchKind::AxialStrip => BranchWeights::Axial {
                row: DepthwiseWeights::new(c, 1, spec.k, 1, 1, vec![1.0; c * spec.k], None).unwrap(),
                col: DepthwiseWeights::new(c, spec.k, 1, 1, 1, vec![1.0; c * spec.k], None).unwrap(),
            },
            _ => BranchWeights::Square(
                DepthwiseWeights::square(c, spec.k, spec.d, vec![1.0; c * spec.k * spec.k]).unwrap(),
            ),
        };
        branches.push(PksBranch {
            spec: *spec,
            weights,
            bn: BatchNormParams::identity(c),
        });
    }
    let w = PksWeights {
        config: cfg.clone(),
        conv0: DepthwiseWeights::square(c, 5, 1, vec![0.0; 25]).unwrap(),
        branches,
        conv1: PointwiseWeights::new(1, 1, vec![1.0], Some(vec![0.0])).unwrap(),
    };
    let fused = hkr_reparameterize(&w).unwrap();
    let map = coverage_map(&cfg.branches, 19).unwrap();
    for i in 0..19 {
        for j in 0..19 {
            assert_eq!(
                fused.tap(0, i, j),
                map.get(i, j) as f32,
                "multiplicity mismatch at ({i},{j})"
            );
        }
    }
    assert_eq!(fused.tap(0, 9, 9), 5.0);
    assert_eq!(fused.tap(0, 0, 0), 2.0);
}
