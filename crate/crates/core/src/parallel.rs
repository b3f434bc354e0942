//! Replicate-parallel map with results in replicate order.

use rayon::prelude::*;

/// Reads `BRW_THREADS` and sizes the global pool once. Later calls are no-ops.
pub fn init_threads() {
    let n = std::env::var("BRW_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0);
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = n {
        b = b.num_threads(n);
    }
    let _ = b.build_global();
}

/// `f(0), ..., f(reps - 1)` computed in parallel, returned in index order.
pub fn map_reps<T, F>(reps: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..reps).into_par_iter().map(f).collect()
}

/// Like [`map_reps`] for fallible work; the first error by index wins.
pub fn try_map_reps<T, E, F>(reps: u64, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(u64) -> Result<T, E> + Sync + Send,
{
    map_reps(reps, f).into_iter().collect()
}
