//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) [`ExecMode::Parallel`] maps
//! over a rayon thread pool; without it every mode runs sequentially. Results
//! always come back in input order, so callers stay deterministic either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// Whether this build can actually run work in parallel.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }

    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        match self {
            ExecMode::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            ExecMode::Parallel => items.par_iter().map(f).collect(),
            #[cfg(not(feature = "parallel"))]
            ExecMode::Parallel => items.iter().map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let seq = ExecMode::Sequential.map(&xs, |x| x * x);
        let par = ExecMode::Parallel.map(&xs, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq[999], 998_001);
    }
}
