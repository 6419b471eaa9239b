//! Execution strategy for data-parallel loops.
//!
//! With the `parallel` feature the helpers here dispatch onto rayon; without
//! it every strategy degrades to a sequential iterator. Results are always
//! collected in input order, so the choice never changes output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a data-parallel loop should run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when this build can actually run loops in parallel.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Runs `op` on a pool of at most `workers` threads. Any [`map`] call made
/// inside `op` with [`Execution::Parallel`] is bounded by that pool.
///
/// Falls back to calling `op` directly when `workers <= 1`, when the
/// `parallel` feature is off, or when the pool cannot be created.
pub fn with_workers<R, F>(workers: usize, op: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    if workers > 1 {
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => return pool.install(op),
            Err(err) => log::warn!("falling back to caller thread: {err}"),
        }
    }
    let _ = workers;
    op()
}

/// The execution strategy implied by a worker count.
pub fn for_workers(workers: usize) -> Execution {
    if workers > 1 {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}
