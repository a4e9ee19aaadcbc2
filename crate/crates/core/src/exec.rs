//! Execution strategy for data-parallel sweeps.
//!
//! Every parallel entry point in the crate takes an [`Exec`]. Results are
//! always returned in input order, so switching strategies never changes an
//! output. Without the `parallel` feature, [`Exec::Parallel`] runs
//! sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Rayon's current pool (global, or the one installed by [`Exec::with_workers`]).
    #[default]
    Parallel,
}

impl Exec {
    /// Whether this build can actually run in parallel.
    pub const fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }

    /// Maps `f` over `0..n`, preserving order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Maps `f` over a slice, preserving order.
    pub fn map_slice<'a, S, T, F>(self, items: &'a [S], f: F) -> Vec<T>
    where
        S: Sync,
        T: Send,
        F: Fn(&'a S) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    /// Runs `op` inside a dedicated pool of `workers` threads.
    ///
    /// `workers == 0` means "use the default pool". Sequential execution and
    /// builds without the `parallel` feature ignore the worker count.
    pub fn with_workers<R, F>(self, workers: usize, op: F) -> R
    where
        R: Send,
        F: FnOnce() -> R + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel if workers > 0 => {
                match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                    Ok(pool) => pool.install(op),
                    Err(err) => {
                        log::warn!("could not build a {workers}-thread pool ({err}); using the global pool");
                        op()
                    }
                }
            }
            _ => {
                let _ = workers;
                op()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree_and_keep_order() {
        let seq = Exec::Sequential.map_range(1000, |i| i * i);
        let par = Exec::Parallel.map_range(1000, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq[31], 961);

        let words = ["a", "bb", "ccc"];
        let lens = Exec::Parallel.with_workers(2, || Exec::Parallel.map_slice(&words, |w| w.len()));
        assert_eq!(lens, vec![1, 2, 3]);
    }
}
