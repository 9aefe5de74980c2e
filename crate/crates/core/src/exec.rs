//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the `Parallel` policy maps over a rayon thread
//! pool; without it (or with `Sequential`) the same closures run in order.
//! Callers never observe a difference in results because every work item owns
//! its own keyed random stream.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Whether this build can actually run work concurrently.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }

    /// `(0..n).map(f).collect()`, possibly in parallel. Output order is index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Fallible variant of [`Exec::map`]; returns the lowest-index error.
    pub fn try_map<T, E, F>(self, n: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        self.map(n, f).into_iter().collect()
    }
}
