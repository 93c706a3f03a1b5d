//! Deterministic parallel helpers.
//!
//! Everything here is written so results are bit-identical for any worker
//! count: work is split into fixed-size chunks, each chunk is reduced
//! serially, and the chunk results are combined in chunk order on one
//! thread. Thread scheduling therefore never changes any floating-point
//! summation order.

use rayon::prelude::*;

/// Fixed chunk length for deterministic reductions. Chosen so that chunk
/// bookkeeping is negligible against the per-item work in assembly loops.
pub const CHUNK: usize = 8192;

/// Run `f` inside a rayon pool with `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("failed to build thread pool");
    pool.install(f)
}

/// Deterministic sum of `f(i)` over `0..n`: chunked in index order.
pub fn sum_indexed(n: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let chunks: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut s = 0.0;
            for i in lo..hi {
                s += f(i);
            }
            s
        })
        .collect();
    chunks.iter().sum()
}

/// Deterministic max of `f(i)` over `0..n`; returns f64::NEG_INFINITY when empty.
pub fn max_indexed(n: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    if n == 0 {
        return f64::NEG_INFINITY;
    }
    let chunks: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut m = f64::NEG_INFINITY;
            for i in lo..hi {
                m = m.max(f(i));
            }
            m
        })
        .collect();
    chunks.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Parallel map over `0..n` into a vector, order preserved.
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

/// Fill `out[i] = f(i)` in parallel over disjoint slices.
pub fn fill_indexed<T: Send>(out: &mut [T], f: impl Fn(usize) -> T + Sync) {
    let base = out.as_ptr() as usize;
    out.par_chunks_mut(CHUNK).for_each(|chunk| {
        let offset = (chunk.as_ptr() as usize - base) / std::mem::size_of::<T>();
        for (k, slot) in chunk.iter_mut().enumerate() {
            *slot = f(offset + k);
        }
    });
}
