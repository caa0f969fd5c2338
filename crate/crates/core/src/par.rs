//! Data-parallel helpers.
//!
//! Every batch loop in the crate goes through these functions so that the
//! `parallel` feature can be switched off at compile time and [`Exec`] can pick
//! the path at run time. Results are always collected in index order, so the
//! output never depends on scheduling.

use serde::{Deserialize, Serialize};

/// Execution strategy for batch loops.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Whether this strategy actually fans out on the current build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_range<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, returning results in slice order.
pub fn map_slice<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    map_range(exec, items.len(), |i| f(i, &items[i]))
}

/// Configures the global worker pool. A no-op without the `parallel` feature.
///
/// Returns `false` if the pool had already been initialised.
pub fn configure_threads(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let seq = map_range(Exec::Sequential, 100, |i| i * i);
        let par = map_range(Exec::Parallel, 100, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 49);
    }
}
