//! Data-parallel helpers. With the `parallel` feature (default) work is spread
//! over the rayon pool; without it every strategy runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How batch work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether `Parallel` actually uses threads in this build.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// Order-preserving map over a slice.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

/// Order-preserving map over an index range.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// Maximum of `f` over the items; `None` for an empty slice or all-NaN values.
pub fn max_by<T, F>(exec: Execution, items: &[T], f: F) -> Option<f64>
where
    T: Sync,
    F: Fn(&T) -> Option<f64> + Sync + Send,
{
    let pick = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    };
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().map(&f).reduce(|| None, pick),
        _ => items.iter().map(&f).fold(None, pick),
    }
}
