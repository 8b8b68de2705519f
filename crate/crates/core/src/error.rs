use thiserror::Error;

/// Errors produced by tensor constructors and forward operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("tensor dimensions must all be >= 1, got {n}x{c}x{h}x{w}")]
    EmptyTensor { n: usize, c: usize, h: usize, w: usize },

    #[error("data length {got} does not match expected {expected}")]
    DataLength { expected: usize, got: usize },

    #[error("channel mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("kernel dimensions must be odd and >= 1, got {kh}x{kw}")]
    EvenKernel { kh: usize, kw: usize },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize, usize, usize),
        right: (usize, usize, usize, usize),
    },

    #[error("negative variance {var} at channel {channel}")]
    NegativeVariance { channel: usize, var: f32 },

    #[error("branch span {span} exceeds fused kernel size {k_max}")]
    SpanOverflow { span: usize, k_max: usize },

    #[error("input spatial dims must be divisible by {required}, got {h}x{w}")]
    Indivisible { required: usize, h: usize, w: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
