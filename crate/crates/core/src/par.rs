#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How batch work (trajectories, sweep cells, cost-matrix rows) is scheduled.
///
/// `Parallel` uses rayon when the `parallel` feature is compiled in and
/// silently runs sequentially otherwise. Results never depend on the choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// `f(i)` for `i in 0..n`, results in index order.
pub(crate) fn map_indexed<R, F>(n: usize, exec: Execution, f: F) -> Vec<R>
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

/// `f(i, chunk_i)` over consecutive `width`-sized chunks of `data`.
pub(crate) fn map_chunks_mut<R, F>(data: &mut [f64], width: usize, exec: Execution, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize, &mut [f64]) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => data
            .par_chunks_exact_mut(width)
            .enumerate()
            .map(|(i, c)| f(i, c))
            .collect(),
        _ => data
            .chunks_exact_mut(width)
            .enumerate()
            .map(|(i, c)| f(i, c))
            .collect(),
    }
}
