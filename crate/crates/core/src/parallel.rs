//! Data-parallel map helpers with a sequential fallback.
//!
//! All hot loops in this crate are index maps followed by an order-preserving
//! collect, so results are bit-identical whether they run on one thread or
//! many: per-element work is pure and any floating-point reduction happens
//! afterwards in a fixed sequential order. With the `parallel` feature
//! disabled the rayon dependency drops out entirely and the sequential branch
//! is all that compiles.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use std::sync::atomic::{AtomicBool, Ordering};

/// Below this many elements the rayon dispatch overhead dominates.
const MIN_PARALLEL_LEN: usize = 32;

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Runs `f` with parallel dispatch disabled, then restores the previous state.
/// Used by the benchmark suite to compare both execution paths in one binary.
pub fn with_sequential<T>(f: impl FnOnce() -> T) -> T {
    let prev = FORCE_SEQUENTIAL.swap(true, Ordering::SeqCst);
    let out = f();
    FORCE_SEQUENTIAL.store(prev, Ordering::SeqCst);
    out
}

pub fn sequential_forced() -> bool {
    FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Maps `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if n < MIN_PARALLEL_LEN || sequential_forced() {
        (0..n).map(f).collect()
    } else {
        (0..n).into_par_iter().map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, collecting results in input order.
pub fn map_slice<'a, S, T, F>(items: &'a [S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&'a S) -> T + Sync + Send,
{
    map_indexed(items.len(), |i| f(&items[i]))
}

/// Number of worker threads the parallel path would use.
pub fn num_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        if sequential_forced() {
            1
        } else {
            rayon::current_num_threads()
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Caps the global worker pool from the `MANIFOLD_FORGE_THREADS` environment
/// variable. A value of `1` (or an unparsable value treated as absent) leaves
/// dispatch to the sequential branch. Safe to call more than once; only the
/// first call can size the pool.
pub fn configure_threads_from_env() {
    #[cfg(feature = "parallel")]
    {
        if let Ok(v) = std::env::var("MANIFOLD_FORGE_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n >= 1 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let par: Vec<f64> = map_indexed(1000, |i| (i as f64).sin() * (i as f64).sqrt());
        let seq: Vec<f64> =
            with_sequential(|| map_indexed(1000, |i| (i as f64).sin() * (i as f64).sqrt()));
        assert_eq!(par, seq);
    }
}
