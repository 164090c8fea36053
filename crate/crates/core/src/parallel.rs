//! Path-level parallelism with a reduction order that is fixed by path index.
//!
//! Work is split into blocks of consecutive path indices. Each block is folded
//! sequentially, and block results are combined by a balanced pairwise tree in
//! block order, so the output is the same for every thread count.

use rayon::prelude::*;
use std::ops::Range;

/// Paths per block. Part of the determinism contract: changing it may change
/// low-order bits of floating-point reductions.
pub const BLOCK_SIZE: u64 = 256;

/// Evaluates `f` on the blocks of `0..count` in parallel; results are returned
/// in block order.
pub fn map_blocks<T, F>(count: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<u64>) -> T + Sync + Send,
{
    let blocks = count.div_ceil(BLOCK_SIZE);
    (0..blocks)
        .into_par_iter()
        .map(|b| {
            let start = b * BLOCK_SIZE;
            f(start..(start + BLOCK_SIZE).min(count))
        })
        .collect()
}

/// Balanced pairwise reduction: adjacent items are combined level by level.
pub fn tree_reduce<T, F>(mut items: Vec<T>, combine: F) -> Option<T>
where
    F: Fn(T, T) -> T,
{
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop()
}

/// Block-parallel fold followed by a tree merge.
pub fn fold_paths<A, I, F, M>(count: u64, init: I, fold: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, u64) + Sync + Send,
    M: Fn(A, A) -> A,
{
    let parts = map_blocks(count, |range| {
        let mut acc = init();
        for i in range {
            fold(&mut acc, i);
        }
        acc
    });
    tree_reduce(parts, merge).unwrap_or_else(init)
}

/// Runs `op` on a dedicated pool with `workers` threads (0 = rayon default).
pub fn with_workers<R: Send>(workers: usize, op: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(op),
        Err(_) => op(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_reduce_visits_all_in_order() {
        let items: Vec<String> = (0..7).map(|i| i.to_string()).collect();
        let out = tree_reduce(items, |a, b| format!("({a}{b})")).unwrap();
        assert_eq!(out, "(((01)(23))((45)6))");
    }

    #[test]
    fn fold_is_thread_count_invariant() {
        let run = |w| {
            with_workers(w, || {
                fold_paths(
                    10_000,
                    || 0.0f64,
                    |acc, i| *acc += (i as f64).sqrt().sin(),
                    |a, b| a + b,
                )
            })
        };
        let one = run(1);
        assert_eq!(one.to_bits(), run(3).to_bits());
        assert_eq!(one.to_bits(), run(8).to_bits());
    }
}
