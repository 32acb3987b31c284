//! Ordered fan-out of independent work items.
//!
//! Callers reduce the returned vector in index order, so any executor that
//! preserves index order yields bit-identical results.

use alloc::vec::Vec;

/// Samples per work item when a dataset is split for reduction.
pub const CHUNK: usize = 32;

pub trait Executor: Sync {
    /// Evaluates `f(0), ..., f(count - 1)` and returns the results in index order.
    fn map<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync;
}

/// Runs everything on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        (0..count).map(f).collect()
    }
}

/// Index ranges of the fixed-size chunks covering `0..len`.
pub fn chunks(len: usize) -> impl Iterator<Item = core::ops::Range<usize>> {
    (0..len.div_ceil(CHUNK)).map(move |c| c * CHUNK..((c + 1) * CHUNK).min(len))
}
