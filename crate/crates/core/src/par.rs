//! Order-preserving map over independent jobs (seeds, test points).

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise the same
    /// as `Sequential`.
    #[default]
    Parallel,
}

/// Maps `f` over `0..count`, returning results in index order regardless of
/// the execution mode.
pub fn map_indices<R, F>(exec: Execution, count: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..count).map(f).collect(),
        Execution::Parallel => parallel_map(count, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<R, F>(count: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    use rayon::prelude::*;
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<R, F>(count: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..count).map(f).collect()
}

/// Runs `f` with at most `jobs` worker threads. `None` keeps the global pool.
#[cfg(feature = "parallel")]
pub fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match jobs {
        Some(j) => match rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_jobs<R: Send>(_jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    f()
}
