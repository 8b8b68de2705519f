//! CPU reference implementation of a poly-kernel gated backbone and its
//! heterogeneous kernel re-parameterization (HKR).
//!
//! The training-time spatial gate aggregates parallel depth-wise branches
//! with heterogeneous kernels (axial strips, dilated sparse squares, dense
//! squares). For inference, HKR folds each branch's batch normalization into
//! its weights and collapses the whole bank into a single K_max x K_max
//! depth-wise convolution that produces identical outputs up to f32
//! reassociation while issuing one kernel launch instead of six.
//!
//! Everything is deterministic: fixed accumulation orders, seeded
//! generators, and plane-granular parallelism (the `parallel` feature) that
//! never changes results.

pub mod backbone;
pub mod catalog;
pub mod error;
pub mod hkr;
pub mod init;
mod par;
pub mod pks;
pub mod rfield;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{BatchNormParams, DepthwiseWeights, PointwiseWeights, Tensor4};
