//! Execution-mode switch for the data-parallel loops.
//!
//! [`Exec::Parallel`] falls back to sequential execution when the crate is
//! built without the `parallel` feature. Results are always collected in index
//! order and reduced sequentially, so both modes produce identical bits.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// True when work will actually be spread over the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Evaluates `f(i)` for `i in 0..n`, returning results in index order.
pub fn map_range<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
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

/// Maps over a slice, preserving order.
pub fn map_slice<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
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

/// Fills consecutive `chunk`-sized rows of `out`, `f(row_index, row)`.
pub fn for_each_row<F>(exec: Exec, out: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if chunk == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        out.par_chunks_mut(chunk).enumerate().for_each(|(i, row)| f(i, row));
        return;
    }
    let _ = exec;
    out.chunks_mut(chunk).enumerate().for_each(|(i, row)| f(i, row));
}

/// Caps the global rayon pool. Has no effect without the `parallel` feature
/// or once the pool has been initialised.
pub fn configure_threads(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        return rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().is_ok();
    }
    #[allow(unreachable_code)]
    {
        let _ = n;
        false
    }
}
