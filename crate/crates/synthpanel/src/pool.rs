//! Thread-pool executor for placebo, jackknife and simulation loops.

use rayon::prelude::*;
use synthpanel_core::Executor;

use crate::error::{Result, Stage, StudyError};

/// Executes indexed work on a dedicated rayon pool. Results keep index
/// order, so output never depends on the worker count.
pub struct ThreadPool {
    pool: rayon::ThreadPool,
}

impl ThreadPool {
    /// `threads = 0` uses one worker per available core.
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| StudyError::estimation(Stage::Config, format!("cannot start worker pool: {e}")))?;
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for ThreadPool {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_index_order() {
        let pool = ThreadPool::new(4).unwrap();
        assert_eq!(pool.threads(), 4);
        let out = pool.map_indexed(1000, |i| i * i);
        assert!(out.iter().enumerate().all(|(i, v)| *v == i * i));
    }
}
