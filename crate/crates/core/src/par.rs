//! Plane-level execution driver.
//!
//! Every forward operation writes its output one (batch, channel) plane at a
//! time, and each plane is produced by exactly one closure call. Splitting
//! work at plane granularity therefore never changes the per-element
//! accumulation order: results are bit-identical whether the planes run
//! sequentially or on a rayon pool, and regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub(crate) fn for_each_plane<F>(out: &mut [f32], plane_len: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync,
{
    out.par_chunks_mut(plane_len)
        .enumerate()
        .for_each(|(i, plane)| f(i, plane));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn for_each_plane<F>(out: &mut [f32], plane_len: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync,
{
    for (i, plane) in out.chunks_mut(plane_len).enumerate() {
        f(i, plane);
    }
}
