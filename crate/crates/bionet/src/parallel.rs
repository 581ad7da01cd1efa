//! Plane-level parallelism with a deterministic sequential fallback.
//!
//! Every kernel in this crate decomposes its output into independent
//! planes and runs one closure per plane. With the `parallel` feature
//! enabled the planes are distributed
//! over the rayon pool; without the feature, or after
//! [`set_parallel(false)`](set_parallel), they run sequentially on the
//! calling thread. The per-plane arithmetic and the order of any
//! cross-plane combination are identical in both modes, so results are
//! bit-for-bit the same either way.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Enables or disables the rayon path at runtime.
///
/// Only meaningful when the `parallel` feature is compiled in; otherwise
/// execution is always sequential.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

/// Whether kernels will currently use the rayon pool.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

/// Runs `f(plane_index, plane)` over consecutive `plane_len` chunks of `data`.
pub(crate) fn for_each_plane<T, F>(data: &mut [T], plane_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    debug_assert!(plane_len > 0 && data.len() % plane_len == 0);
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        data.par_chunks_mut(plane_len)
            .enumerate()
            .for_each(|(i, plane)| f(i, plane));
        return;
    }
    for (i, plane) in data.chunks_mut(plane_len).enumerate() {
        f(i, plane);
    }
}

/// Collects `f(0), f(1), ..., f(n - 1)` in index order.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}
