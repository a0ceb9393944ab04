//! Data-parallel helpers.
//!
//! Every hot loop in the crate goes through these functions so that the
//! same code path runs either on the rayon pool or sequentially. Without the
//! `parallel` feature, [`Execution::Parallel`] silently degrades to the
//! sequential path.
//!
//! Reductions come in two flavours. The deterministic one sums fixed-size
//! chunks and folds the partial sums in index order, so the result does not
//! depend on the thread count. The fast one lets rayon pick the tree.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used by the deterministic reductions.
pub const REDUCTION_CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when work will actually be handed to rayon.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Execution mode plus reduction policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecPolicy {
    pub execution: Execution,
    pub deterministic: bool,
}

impl Default for ExecPolicy {
    fn default() -> Self {
        Self {
            execution: Execution::Parallel,
            deterministic: true,
        }
    }
}

impl ExecPolicy {
    pub fn sequential() -> Self {
        Self {
            execution: Execution::Sequential,
            deterministic: true,
        }
    }

    pub fn parallel() -> Self {
        Self::default()
    }
}

/// Ordered map over `0..n`.
pub fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Calls `f(i, &mut out[i])` for every slot.
pub fn fill<T, F>(exec: Execution, out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        out.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
        return;
    }
    let _ = exec;
    out.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

/// Calls `f(k, chunk)` on consecutive chunks of length `chunk`.
pub fn for_each_chunk_mut<T, F>(exec: Execution, out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(k, c)| f(k, c));
        return;
    }
    let _ = exec;
    out.chunks_mut(chunk).enumerate().for_each(|(k, c)| f(k, c));
}

/// Sum of `f(i)` over `0..n`.
pub fn sum<F>(policy: ExecPolicy, n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    if policy.deterministic {
        let chunks = n.div_ceil(REDUCTION_CHUNK);
        let partial = map_range(policy.execution, chunks, |c| {
            let lo = c * REDUCTION_CHUNK;
            let hi = (lo + REDUCTION_CHUNK).min(n);
            (lo..hi).map(&f).sum::<f64>()
        });
        return partial.into_iter().sum();
    }
    #[cfg(feature = "parallel")]
    if policy.execution.is_parallel() {
        return (0..n).into_par_iter().map(f).sum();
    }
    (0..n).map(f).sum()
}

pub fn dot(policy: ExecPolicy, a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    sum(policy, a.len(), |i| a[i] * b[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_sum_matches_across_modes() {
        let n = 10_007;
        let f = |i: usize| ((i as f64) * 0.37).sin() * 1e-3 + 1.0 / (1.0 + i as f64);
        let seq = sum(ExecPolicy::sequential(), n, f);
        let par = sum(ExecPolicy::parallel(), n, f);
        assert_eq!(seq.to_bits(), par.to_bits());
    }

    #[test]
    fn map_range_is_ordered() {
        let v = map_range(Execution::Parallel, 1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }

    #[test]
    fn chunks_cover_everything() {
        let mut v = vec![0usize; 1001];
        for_each_chunk_mut(Execution::Parallel, &mut v, 64, |k, c| {
            for (j, x) in c.iter_mut().enumerate() {
                *x = k * 64 + j;
            }
        });
        assert!(v.iter().enumerate().all(|(i, &x)| x == i));
    }
}
