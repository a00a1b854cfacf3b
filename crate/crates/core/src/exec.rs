//! Execution strategy for embarrassingly parallel work.
//!
//! Independent jobs (rollouts, realization sweeps, per-component index
//! computation, per-node gradient terms) go through [`map_indices`]. With the
//! `parallel` feature the [`Execution::Parallel`] strategy fans out over the
//! current rayon pool; without it, every strategy runs sequentially. Results
//! are always returned in job order, so downstream reductions do not depend on
//! scheduling.

/// How independent jobs are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Rayon data parallelism; sequential when the `parallel` feature is off.
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this strategy actually runs in parallel in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Run `job(i)` for every `i` in `0..count`, returning results in index order.
pub fn map_indices<T, F>(count: usize, exec: Execution, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..count).into_par_iter().map(job).collect()
        }
        _ => (0..count).map(job).collect(),
    }
}

/// Like [`map_indices`] over a slice.
pub fn map_slice<S, T, F>(items: &[S], exec: Execution, job: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    map_indices(items.len(), exec, |i| job(&items[i]))
}

/// Pairwise (cascade) summation. The result depends only on the order of
/// `values`, never on how they were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Run `f` inside a dedicated pool of `jobs` threads. Without the `parallel`
/// feature `jobs` is ignored.
pub fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if let Some(jobs) = jobs {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
            return pool.install(f);
        }
    }
    let _ = jobs;
    f()
}
