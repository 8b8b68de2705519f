//! Independent straight-line oracles used by the integration tests. These are
//! written from the operation definitions (cross-correlation with "same" zero
//! padding, kernel rows outer and columns inner, channels ascending) and never
//! call the library's forward paths, so they stay an independent route.
#![allow(dead_code)]

use pkv2_core::pks::{BranchWeights, PksWeights};
use pkv2_core::tensor::{BatchNormParams, DepthwiseWeights, PointwiseWeights, Tensor4};

/// Plain nested-loop dilated depth-wise cross-correlation.
pub fn naive_depthwise(x: &Tensor4, k: &DepthwiseWeights) -> Tensor4 {
    let (n, c, h, w) = x.dims();
    assert_eq!(c, k.c);
    let pad_h = (k.dilation_h * (k.kh - 1) / 2) as isize;
    let pad_w = (k.dilation_w * (k.kw - 1) / 2) as isize;
    let mut out = vec![0.0f32; n * c * h * w];
    for ni in 0..n {
        for ci in 0..c {
            let bias = k.bias.as_ref().map_or(0.0, |b| b[ci]);
            for oh in 0..h {
                for ow in 0..w {
                    let mut acc = 0.0f32;
                    for r in 0..k.kh {
                        for s in 0..k.kw {
                            let ih = oh as isize + (r * k.dilation_h) as isize - pad_h;
                            let iw = ow as isize + (s * k.dilation_w) as isize - pad_w;
                            if ih >= 0 && ih < h as isize && iw >= 0 && iw < w as isize {
                                acc += k.weights[(ci * k.kh + r) * k.kw + s]
                                    * x.get(ni, ci, ih as usize, iw as usize);
                            }
                        }
                    }
                    out[((ni * c + ci) * h + oh) * w + ow] = acc + bias;
                }
            }
        }
    }
    Tensor4::new(n, c, h, w, out).unwrap()
}

/// Per-pixel matrix-vector product across channels.
pub fn naive_pointwise(x: &Tensor4, pw: &PointwiseWeights) -> Tensor4 {
    let (n, c, h, w) = x.dims();
    assert_eq!(c, pw.c_in);
    let mut out = vec![0.0f32; n * pw.c_out * h * w];
    for ni in 0..n {
        for co in 0..pw.c_out {
            for oh in 0..h {
                for ow in 0..w {
                    let mut acc = 0.0f32;
                    for ci in 0..pw.c_in {
                        acc += pw.weights[co * pw.c_in + ci] * x.get(ni, ci, oh, ow);
                    }
                    if let Some(b) = &pw.bias {
                        acc += b[co];
                    }
                    out[((ni * pw.c_out + co) * h + oh) * w + ow] = acc;
                }
            }
        }
    }
    Tensor4::new(n, pw.c_out, h, w, out).unwrap()
}

/// Pointwise inference-mode BN, per-channel scale precomputed first
/// (the shared association convention).
pub fn naive_batchnorm(x: &Tensor4, bn: &BatchNormParams) -> Tensor4 {
    let (n, c, h, w) = x.dims();
    let mut out = vec![0.0f32; n * c * h * w];
    for ni in 0..n {
        for ci in 0..c {
            let scale = bn.gamma[ci] / (bn.var[ci] + bn.eps).sqrt();
            for oh in 0..h {
                for ow in 0..w {
                    out[((ni * c + ci) * h + oh) * w + ow] =
                        (x.get(ni, ci, oh, ow) - bn.mean[ci]) * scale + bn.beta[ci];
                }
            }
        }
    }
    Tensor4::new(n, c, h, w, out).unwrap()
}

/// Straight-line training forward of the gate module: materializes every
/// branch response independently with the naive primitives above and sums
/// them in branch order.
pub fn naive_pks_forward(x: &Tensor4, w: &PksWeights) -> Tensor4 {
    let local = naive_depthwise(x, &w.conv0);
    let mut sum: Option<Vec<f32>> = None;
    for br in &w.branches {
        let z = match &br.weights {
            BranchWeights::Axial { row, col } => naive_depthwise(&naive_depthwise(&local, row), col),
            BranchWeights::Square(k) => naive_depthwise(&local, k),
        };
        let zn = naive_batchnorm(&z, &br.bn);
        sum = Some(match sum {
            None => zn.data().to_vec(),
            Some(mut acc) => {
                for (a, &v) in acc.iter_mut().zip(zn.data()) {
                    *a += v;
                }
                acc
            }
        });
    }
    let (n, c, h, wd) = x.dims();
    let summed = Tensor4::new(n, c, h, wd, sum.unwrap()).unwrap();
    let attn = naive_pointwise(&summed, &w.conv1);
    let gated: Vec<f32> = x
        .data()
        .iter()
        .zip(attn.data())
        .map(|(&u, &v)| u * v)
        .collect();
    Tensor4::new(n, c, h, wd, gated).unwrap()
}

/// Standard normal CDF by Simpson quadrature of the density over [0, |x|];
/// independent of the erf-based implementation.
pub fn normal_cdf_quadrature(x: f64) -> f64 {
    let steps = 20_000usize;
    let upper = x.abs();
    if upper == 0.0 {
        return 0.5;
    }
    let h = upper / steps as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut integral = pdf(0.0) + pdf(upper);
    for i in 1..steps {
        let t = i as f64 * h;
        integral += pdf(t) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    integral *= h / 3.0;
    if x >= 0.0 {
        0.5 + integral
    } else {
        0.5 - integral
    }
}

pub fn max_abs_diff(a: &Tensor4, b: &Tensor4) -> f32 {
    assert_eq!(a.dims(), b.dims());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&u, &v)| (u - v).abs())
        .fold(0.0f32, f32::max)
}
