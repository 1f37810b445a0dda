//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature (default) index maps run on rayon. Without it,
//! or inside [`with_workers`]`(1, ..)`, they run as a plain loop. Outputs are
//! always collected in index order, so callers that reduce the returned
//! vector sequentially get bit-identical results for any worker count.

use std::cell::Cell;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

#[cfg_attr(not(feature = "parallel"), allow(dead_code))]
fn sequential_forced() -> bool {
    FORCE_SEQUENTIAL.with(|c| c.get())
}

/// Evaluates `f(0..n)` and returns the results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !sequential_forced() && n > 1 {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Like [`map_indexed`] but for fallible work; the first error by index wins.
pub fn try_map_indexed<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indexed(n, f).into_iter().collect()
}

/// Runs `f` with at most `workers` threads. `workers == 1` is the sequential
/// reference path; `0` means "use the global pool".
pub fn with_workers<R, F>(workers: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    if workers == 1 {
        let prev = FORCE_SEQUENTIAL.with(|c| c.replace(true));
        let out = f();
        FORCE_SEQUENTIAL.with(|c| c.set(prev));
        return out;
    }
    #[cfg(feature = "parallel")]
    {
        if workers > 1 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                return pool.install(f);
            }
        }
    }
    f()
}

/// Whether a parallel backend is compiled in.
pub fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}
