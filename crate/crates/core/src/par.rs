//! Replicate fan-out.
//!
//! Results come back in replicate order whatever the pool size, and every
//! replicate derives its randomness from its own index, so output never
//! depends on the number of workers.

use rayon::prelude::*;

/// Evaluates `f(0..n)` on `workers` threads (the global pool when `None`).
pub fn replicate_map<T, F>(n: u64, workers: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    let run = || (0..n).into_par_iter().map(&f).collect::<Vec<T>>();
    match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .expect("thread pool")
            .install(run),
        None => run(),
    }
}

/// Like [`replicate_map`], returning the lowest-index error if any.
pub fn try_replicate_map<T, E, F>(n: u64, workers: Option<usize>, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(u64) -> Result<T, E> + Sync + Send,
{
    replicate_map(n, workers, f).into_iter().collect()
}
