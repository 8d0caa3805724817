//! Ordered data-parallel map with a sequential fallback.
//!
//! Every helper here returns results in index order, so callers that reduce
//! the output sequentially get bit-identical numbers whether the work ran on
//! one thread or many.

/// How a batch of independent work items is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Uses the ambient rayon pool. Degrades to [`Execution::Sequential`]
    /// when the crate is built without the `parallel` feature.
    #[default]
    Parallel,
}

impl Execution {
    pub fn from_jobs(jobs: usize) -> Self {
        if jobs <= 1 {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over `0..n` and collects the results in index order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Runs `f` inside a dedicated pool of `jobs` threads when `jobs > 1`.
pub fn with_jobs<R, F>(jobs: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    if jobs > 1 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            return pool.install(f);
        }
    }
    let _ = jobs;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_results_match_between_modes() {
        let f = |i: usize| (i as f64).sqrt() * 3.0;
        let seq = map_indexed(Execution::Sequential, 257, f);
        let par = map_indexed(Execution::Parallel, 257, f);
        assert_eq!(seq, par);
    }

    #[test]
    fn jobs_mapping() {
        assert_eq!(Execution::from_jobs(0), Execution::Sequential);
        assert_eq!(Execution::from_jobs(1), Execution::Sequential);
        assert_eq!(Execution::from_jobs(4), Execution::Parallel);
        assert_eq!(with_jobs(3, || 7), 7);
    }
}
