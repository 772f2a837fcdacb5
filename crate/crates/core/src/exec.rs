//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature (default) work is fanned out over rayon's
//! global pool; without it, or when [`ExecMode::Sequential`] is requested,
//! the same closures run in order on the calling thread. Callers derive
//! per-item seeds from the item index, so both modes produce identical results.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// True when parallel execution is both requested and compiled in.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indices<T, F>(mode: ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Map `f` over a slice, collecting results in order.
pub fn map_slice<I, T, F>(mode: ExecMode, items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Count indices in `0..n` for which `f` holds.
pub fn count_indices<F>(mode: ExecMode, n: usize, f: F) -> usize
where
    F: Fn(usize) -> bool + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().filter(|&i| f(i)).count();
    }
    let _ = mode;
    (0..n).filter(|&i| f(i)).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |i: usize| (i * i) % 7;
        assert_eq!(
            map_indices(ExecMode::Sequential, 100, f),
            map_indices(ExecMode::Parallel, 100, f)
        );
        assert_eq!(
            count_indices(ExecMode::Sequential, 100, |i| i % 3 == 0),
            count_indices(ExecMode::Parallel, 100, |i| i % 3 == 0)
        );
    }
}
