//! Execution strategy for the data-parallel inner loops.
//!
//! Every hot loop in the crate (distance transforms, candidate scans,
//! blending, corpus inference) is written once against [`Exec`]. With the
//! `parallel` feature the [`Exec::Parallel`] variant fans out over rayon;
//! without it, both variants run the same sequential code. Results are
//! identical either way.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
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
    /// Whether work will actually be spread across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Map `f` over `items`, preserving order.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Map `f` over `items` using at most `max_threads` workers.
    pub fn map_bounded<T, U, F>(self, items: &[T], max_threads: usize, f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() && max_threads > 1 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(max_threads).build() {
                return pool.install(|| self.map(items, f));
            }
        }
        let _ = max_threads;
        items.iter().map(f).collect()
    }

    /// Smallest index in `0..len` satisfying `pred`, like
    /// `(0..len).position(pred)` but split across threads when parallel.
    pub fn find_first<F>(self, len: usize, pred: F) -> Option<usize>
    where
        F: Fn(usize) -> bool + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() && len >= PARALLEL_SCAN_MIN {
            use rayon::prelude::*;
            return (0..len).into_par_iter().find_first(|&i| pred(i));
        }
        (0..len).find(|&i| pred(i))
    }

    /// Apply `f(row_index, row)` to each `row_len`-sized chunk of `data`.
    pub fn for_each_row<T, F>(self, data: &mut [T], row_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if row_len == 0 {
            return;
        }
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            data.par_chunks_mut(row_len).enumerate().for_each(|(i, r)| f(i, r));
            return;
        }
        data.chunks_mut(row_len).enumerate().for_each(|(i, r)| f(i, r));
    }
}

/// Below this many candidates a parallel scan costs more than it saves.
#[cfg(feature = "parallel")]
const PARALLEL_SCAN_MIN: usize = 4096;
