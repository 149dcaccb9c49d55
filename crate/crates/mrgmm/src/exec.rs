//! Task execution: data-parallel over independent work items with a
//! sequential fallback.
//!
//! With the `parallel` feature (default), `run_indexed` fans the items out
//! over a rayon pool sized by `threads`; without it, or with `threads <= 1`,
//! items run in index order on the calling thread. Either way the returned
//! vector is ordered by item index and every item owns its random streams,
//! so results are identical bit for bit.

/// Runs `f(0), ..., f(count - 1)` and collects the results in index order.
#[cfg(feature = "parallel")]
pub fn run_indexed<T, F>(threads: usize, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if threads <= 1 || count <= 1 {
        return (0..count).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("failed to build rayon pool");
    pool.install(|| {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(f).collect()
    })
}

/// Sequential fallback used when the `parallel` feature is disabled.
#[cfg(not(feature = "parallel"))]
pub fn run_indexed<T, F>(_threads: usize, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..count).map(f).collect()
}

/// Number of logical CPUs available, used as the default thread count.
pub fn default_threads() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_by_index() {
        let out = run_indexed(4, 100, |i| i * i);
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn serial_and_parallel_agree() {
        let a = run_indexed(1, 37, |i| (i as f64).sqrt());
        let b = run_indexed(4, 37, |i| (i as f64).sqrt());
        assert_eq!(a, b);
    }
}
