//! Data-parallel helpers with a sequential fallback.
//!
//! With the default `parallel` feature the maps below fan out over rayon's
//! current thread pool; without it they run sequentially. Results are
//! position-indexed either way, so output order never depends on scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, collecting results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Maps `f` over a slice, collecting results in input order.
pub fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Always-sequential twin of [`map_indexed`], kept for benchmarks that
/// compare the two paths within one build.
pub fn map_indexed_seq<T, F>(n: usize, mut f: F) -> Vec<T>
where
    F: FnMut(usize) -> T,
{
    (0..n).map(&mut f).collect()
}
