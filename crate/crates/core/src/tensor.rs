//! Deterministic NCHW tensor primitives.
//!
//! All operations are pure functions over immutable inputs and use 32-bit
//! float accumulation with a fixed loop order (kernel rows outer, kernel
//! columns inner; channels ascending for cross-channel reductions), so two
//! runs on the same inputs produce bit-identical outputs. Convolutions use
//! cross-correlation semantics (no kernel flip) and implicit "same" zero
//! padding of `dilation * (k - 1) / 2` per axis, which keeps spatial sizes
//! unchanged.

use crate::error::{Error, Result};
use crate::par::for_each_plane;

/// Batched feature map in N x C x H x W layout, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Tensor4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::EmptyTensor { n, c, h, w });
        }
        let expected = n * c * h * w;
        if data.len() != expected {
            return Err(Error::DataLength {
                expected,
                got: data.len(),
            });
        }
        Ok(Self { n, c, h, w, data })
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        Self::new(n, c, h, w, vec![0.0; n * c * h * w])
    }

    pub fn full(n: usize, c: usize, h: usize, w: usize, value: f32) -> Result<Self> {
        Self::new(n, c, h, w, vec![value; n * c * h * w])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // dimensions are >= 1 by construction
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable element access; the shape itself is immutable.
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[((n * self.c + c) * self.h + h) * self.w + w]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let len = self.h * self.w;
        let start = (n * self.c + c) * len;
        &self.data[start..start + len]
    }

    fn same_shape(&self, other: &Tensor4) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(())
    }
}

/// Per-channel depth-wise kernel of shape C x 1 x kh x kw with optional
/// per-channel bias. Kernel dims must be odd so center alignment under the
/// "same" padding rule is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseWeights {
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub dilation_h: usize,
    pub dilation_w: usize,
    pub weights: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

impl DepthwiseWeights {
    pub fn new(
        c: usize,
        kh: usize,
        kw: usize,
        dilation_h: usize,
        dilation_w: usize,
        weights: Vec<f32>,
        bias: Option<Vec<f32>>,
    ) -> Result<Self> {
        if kh == 0 || kw == 0 || kh.is_multiple_of(2) || kw.is_multiple_of(2) {
            return Err(Error::EvenKernel { kh, kw });
        }
        if c == 0 || dilation_h == 0 || dilation_w == 0 {
            return Err(Error::Config(format!(
                "depthwise kernel needs c >= 1 and dilations >= 1, got c={c} d=({dilation_h},{dilation_w})"
            )));
        }
        if weights.len() != c * kh * kw {
            return Err(Error::DataLength {
                expected: c * kh * kw,
                got: weights.len(),
            });
        }
        if let Some(b) = &bias {
            if b.len() != c {
                return Err(Error::DataLength {
                    expected: c,
                    got: b.len(),
                });
            }
        }
        Ok(Self {
            c,
            kh,
            kw,
            dilation_h,
            dilation_w,
            weights,
            bias,
        })
    }

    /// Square k x k kernel with a uniform dilation.
    pub fn square(c: usize, k: usize, dilation: usize, weights: Vec<f32>) -> Result<Self> {
        Self::new(c, k, k, dilation, dilation, weights, None)
    }

    pub fn kernel(&self, c: usize) -> &[f32] {
        let len = self.kh * self.kw;
        &self.weights[c * len..(c + 1) * len]
    }

    /// Effective span per axis: dilation * (k - 1) + 1.
    pub fn span_h(&self) -> usize {
        self.dilation_h * (self.kh - 1) + 1
    }

    pub fn span_w(&self) -> usize {
        self.dilation_w * (self.kw - 1) + 1
    }
}

/// Inference-mode batch normalization parameters (running statistics only).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
}

pub const BN_EPS: f32 = 1e-5;

impl BatchNormParams {
    pub fn new(
        gamma: Vec<f32>,
        beta: Vec<f32>,
        mean: Vec<f32>,
        var: Vec<f32>,
        eps: f32,
    ) -> Result<Self> {
        let c = gamma.len();
        if c == 0 {
            return Err(Error::Config("batch norm needs at least one channel".into()));
        }
        for (name, v) in [("beta", &beta), ("mean", &mean), ("var", &var)] {
            if v.len() != c {
                return Err(Error::Config(format!(
                    "batch norm array {name} has length {}, expected {c}",
                    v.len()
                )));
            }
        }
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::Config(format!("batch norm eps must be > 0, got {eps}")));
        }
        for (channel, &v) in var.iter().enumerate() {
            if v < 0.0 {
                return Err(Error::NegativeVariance { channel, var: v });
            }
        }
        Ok(Self {
            gamma,
            beta,
            mean,
            var,
            eps,
        })
    }

    /// Parameters that make `batchnorm_apply` an exact identity:
    /// var + eps == 1.0 so the scale is exactly 1.
    pub fn identity(c: usize) -> Self {
        Self {
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            mean: vec![0.0; c],
            var: vec![1.0 - BN_EPS; c],
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// 1x1 convolution: a per-pixel linear map across channels, row-major
/// `c_out x c_in` weight matrix plus optional per-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseWeights {
    pub c_out: usize,
    pub c_in: usize,
    pub weights: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

impl PointwiseWeights {
    pub fn new(c_out: usize, c_in: usize, weights: Vec<f32>, bias: Option<Vec<f32>>) -> Result<Self> {
        if c_out == 0 || c_in == 0 {
            return Err(Error::Config("pointwise conv needs c_out, c_in >= 1".into()));
        }
        if weights.len() != c_out * c_in {
            return Err(Error::DataLength {
                expected: c_out * c_in,
                got: weights.len(),
            });
        }
        if let Some(b) = &bias {
            if b.len() != c_out {
                return Err(Error::DataLength {
                    expected: c_out,
                    got: b.len(),
                });
            }
        }
        Ok(Self {
            c_out,
            c_in,
            weights,
            bias,
        })
    }

    pub fn identity(c: usize) -> Self {
        let mut weights = vec![0.0; c * c];
        for i in 0..c {
            weights[i * c + i] = 1.0;
        }
        Self {
            c_out: c,
            c_in: c,
            weights,
            bias: None,
        }
    }
}

/// Dense convolution weights of shape c_out x c_in x kh x kw, used by the
/// strided patch-embedding layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub c_out: usize,
    pub c_in: usize,
    pub kh: usize,
    pub kw: usize,
    pub weights: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

impl ConvWeights {
    pub fn new(
        c_out: usize,
        c_in: usize,
        kh: usize,
        kw: usize,
        weights: Vec<f32>,
        bias: Option<Vec<f32>>,
    ) -> Result<Self> {
        if kh == 0 || kw == 0 || kh.is_multiple_of(2) || kw.is_multiple_of(2) {
            return Err(Error::EvenKernel { kh, kw });
        }
        if c_out == 0 || c_in == 0 {
            return Err(Error::Config("conv needs c_out, c_in >= 1".into()));
        }
        if weights.len() != c_out * c_in * kh * kw {
            return Err(Error::DataLength {
                expected: c_out * c_in * kh * kw,
                got: weights.len(),
            });
        }
        if let Some(b) = &bias {
            if b.len() != c_out {
                return Err(Error::DataLength {
                    expected: c_out,
                    got: b.len(),
                });
            }
        }
        Ok(Self {
            c_out,
            c_in,
            kh,
            kw,
            weights,
            bias,
        })
    }
}

/// Dilated depth-wise cross-correlation with "same" zero padding.
///
/// Each output element accumulates kernel rows outer, kernel columns inner,
/// then adds the channel bias (0 if absent).
pub fn depthwise_conv(x: &Tensor4, k: &DepthwiseWeights) -> Result<Tensor4> {
    if x.c() != k.c {
        return Err(Error::ChannelMismatch {
            expected: k.c,
            got: x.c(),
        });
    }
    let (h, w) = (x.h(), x.w());
    let pad_h = (k.dilation_h * (k.kh - 1) / 2) as isize;
    let pad_w = (k.dilation_w * (k.kw - 1) / 2) as isize;
    let plane = h * w;
    let mut out = vec![0.0f32; x.len()];
    for_each_plane(&mut out, plane, |p, out_plane| {
        let ci = p % x.c();
        let xin = &x.data[p * plane..(p + 1) * plane];
        let kern = k.kernel(ci);
        let bias = k.bias.as_ref().map_or(0.0, |b| b[ci]);
        for oh in 0..h {
            for ow in 0..w {
                let mut acc = 0.0f32;
                for r in 0..k.kh {
                    let ih = oh as isize + (r * k.dilation_h) as isize - pad_h;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let row_in = &xin[ih as usize * w..ih as usize * w + w];
                    let row_k = &kern[r * k.kw..(r + 1) * k.kw];
                    for (s, &tap) in row_k.iter().enumerate() {
                        let iw = ow as isize + (s * k.dilation_w) as isize - pad_w;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        acc += tap * row_in[iw as usize];
                    }
                }
                out_plane[oh * w + ow] = acc + bias;
            }
        }
    });
    Tensor4::new(x.n(), x.c(), h, w, out)
}

/// Axial-strip convolution: a 1 x k pass followed by a k x 1 pass, each with
/// "same" padding. Training form, so neither factor carries a bias.
pub fn separable_axial_conv(
    x: &Tensor4,
    w_1xk: &DepthwiseWeights,
    w_kx1: &DepthwiseWeights,
) -> Result<Tensor4> {
    if w_1xk.kh != 1 || w_kx1.kw != 1 || w_1xk.kw != w_kx1.kh {
        return Err(Error::Config(format!(
            "axial factors must be 1xk and kx1 with matching k, got {}x{} and {}x{}",
            w_1xk.kh, w_1xk.kw, w_kx1.kh, w_kx1.kw
        )));
    }
    if w_1xk.bias.is_some() || w_kx1.bias.is_some() {
        return Err(Error::Config(
            "axial training factors must not carry a bias".into(),
        ));
    }
    let mid = depthwise_conv(x, w_1xk)?;
    depthwise_conv(&mid, w_kx1)
}

/// Inference-mode batch normalization on running statistics:
/// `gamma * (x - mean) / sqrt(var + eps) + beta` per channel.
pub fn batchnorm_apply(x: &Tensor4, bn: &BatchNormParams) -> Result<Tensor4> {
    if x.c() != bn.channels() {
        return Err(Error::ChannelMismatch {
            expected: bn.channels(),
            got: x.c(),
        });
    }
    let plane = x.h() * x.w();
    let mut out = vec![0.0f32; x.len()];
    for_each_plane(&mut out, plane, |p, out_plane| {
        let ci = p % x.c();
        let scale = bn.gamma[ci] / (bn.var[ci] + bn.eps).sqrt();
        let mean = bn.mean[ci];
        let beta = bn.beta[ci];
        let xin = &x.data[p * plane..(p + 1) * plane];
        for (o, &v) in out_plane.iter_mut().zip(xin) {
            *o = (v - mean) * scale + beta;
        }
    });
    Tensor4::new(x.n(), x.c(), x.h(), x.w(), out)
}

/// 1x1 convolution across channels; spatial dims preserved. Accumulates input
/// channels in ascending order.
pub fn pointwise_conv(x: &Tensor4, pw: &PointwiseWeights) -> Result<Tensor4> {
    if x.c() != pw.c_in {
        return Err(Error::ChannelMismatch {
            expected: pw.c_in,
            got: x.c(),
        });
    }
    let plane = x.h() * x.w();
    let mut out = vec![0.0f32; x.n() * pw.c_out * plane];
    for_each_plane(&mut out, plane, |p, out_plane| {
        let n = p / pw.c_out;
        let co = p % pw.c_out;
        let row = &pw.weights[co * pw.c_in..(co + 1) * pw.c_in];
        for (ci, &wv) in row.iter().enumerate() {
            let xin = x.plane(n, ci);
            for (o, &v) in out_plane.iter_mut().zip(xin) {
                *o += wv * v;
            }
        }
        if let Some(b) = &pw.bias {
            let bias = b[co];
            for o in out_plane.iter_mut() {
                *o += bias;
            }
        }
    });
    Tensor4::new(x.n(), pw.c_out, x.h(), x.w(), out)
}

/// Strided dense convolution with zero padding of (k - 1) / 2 per axis.
/// Output spatial size is (in + 2*pad - k) / stride + 1 per axis.
pub fn conv2d(x: &Tensor4, k: &ConvWeights, stride: usize) -> Result<Tensor4> {
    if x.c() != k.c_in {
        return Err(Error::ChannelMismatch {
            expected: k.c_in,
            got: x.c(),
        });
    }
    if stride == 0 {
        return Err(Error::Config("conv stride must be >= 1".into()));
    }
    let (h, w) = (x.h(), x.w());
    let pad_h = (k.kh - 1) / 2;
    let pad_w = (k.kw - 1) / 2;
    let oh = (h + 2 * pad_h - k.kh) / stride + 1;
    let ow = (w + 2 * pad_w - k.kw) / stride + 1;
    let plane = oh * ow;
    let ktap = k.kh * k.kw;
    let mut out = vec![0.0f32; x.n() * k.c_out * plane];
    for_each_plane(&mut out, plane, |p, out_plane| {
        let n = p / k.c_out;
        let co = p % k.c_out;
        for ci in 0..k.c_in {
            let xin = x.plane(n, ci);
            let kern = &k.weights[(co * k.c_in + ci) * ktap..(co * k.c_in + ci + 1) * ktap];
            for py in 0..oh {
                for px in 0..ow {
                    let mut acc = 0.0f32;
                    for r in 0..k.kh {
                        let ih = (py * stride + r) as isize - pad_h as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for s in 0..k.kw {
                            let iw = (px * stride + s) as isize - pad_w as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            acc += kern[r * k.kw + s] * xin[ih as usize * w + iw as usize];
                        }
                    }
                    out_plane[py * ow + px] += acc;
                }
            }
        }
        if let Some(b) = &k.bias {
            let bias = b[co];
            for o in out_plane.iter_mut() {
                *o += bias;
            }
        }
    });
    Tensor4::new(x.n(), k.c_out, oh, ow, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Mul,
    Add,
}

pub fn elementwise(x: &Tensor4, y: &Tensor4, op: BinaryOp) -> Result<Tensor4> {
    x.same_shape(y)?;
    let plane = x.h() * x.w();
    let mut out = vec![0.0f32; x.len()];
    for_each_plane(&mut out, plane, |p, out_plane| {
        let a = &x.data[p * plane..(p + 1) * plane];
        let b = &y.data[p * plane..(p + 1) * plane];
        match op {
            BinaryOp::Mul => {
                for ((o, &u), &v) in out_plane.iter_mut().zip(a).zip(b) {
                    *o = u * v;
                }
            }
            BinaryOp::Add => {
                for ((o, &u), &v) in out_plane.iter_mut().zip(a).zip(b) {
                    *o = u + v;
                }
            }
        }
    });
    Tensor4::new(x.n(), x.c(), x.h(), x.w(), out)
}

/// Exact GELU: x * Phi(x) with Phi the Gaussian CDF, evaluated through erf in
/// f64 and rounded back to f32.
pub fn gelu(x: &Tensor4) -> Tensor4 {
    let plane = x.h() * x.w();
    let mut out = vec![0.0f32; x.len()];
    for_each_plane(&mut out, plane, |p, out_plane| {
        let xin = &x.data[p * plane..(p + 1) * plane];
        for (o, &v) in out_plane.iter_mut().zip(xin) {
            *o = gelu_scalar(v);
        }
    });
    Tensor4::new(x.n(), x.c(), x.h(), x.w(), out).expect("shape preserved")
}

pub fn gelu_scalar(v: f32) -> f32 {
    let v = v as f64;
    (v * 0.5 * (1.0 + libm::erf(v / std::f64::consts::SQRT_2))) as f32
}

/// Multiplies every element of channel c by `scale[c]` (layer-scale).
pub fn channel_scale(x: &Tensor4, scale: &[f32]) -> Result<Tensor4> {
    if x.c() != scale.len() {
        return Err(Error::ChannelMismatch {
            expected: scale.len(),
            got: x.c(),
        });
    }
    let plane = x.h() * x.w();
    let mut out = vec![0.0f32; x.len()];
    for_each_plane(&mut out, plane, |p, out_plane| {
        let s = scale[p % x.c()];
        let xin = &x.data[p * plane..(p + 1) * plane];
        for (o, &v) in out_plane.iter_mut().zip(xin) {
            *o = s * v;
        }
    });
    Tensor4::new(x.n(), x.c(), x.h(), x.w(), out)
}
