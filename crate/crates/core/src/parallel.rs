//! Deterministic walker-parallel reduction.
//!
//! Walkers are split into fixed chunks of [`CHUNK`] indices. Each chunk is
//! folded sequentially, chunks run on the rayon pool, and the chunk results are
//! merged in index order. The reduction tree depends only on the walker count,
//! so results are bit-identical for any thread budget.

use rayon::prelude::*;

pub const CHUNK: u64 = 256;

/// Fold `step(acc, walker)` over `0..n` and merge chunk accumulators in order.
pub fn reduce_walkers<A, I, S, M>(n: u64, init: I, step: S, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync,
    S: Fn(&mut A, u64) + Sync,
    M: Fn(&mut A, A),
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<A> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            for w in c * CHUNK..((c + 1) * CHUNK).min(n) {
                step(&mut acc, w);
            }
            acc
        })
        .collect();
    let mut total = init();
    for p in parts {
        merge(&mut total, p);
    }
    total
}

/// Run `f` on a pool with `threads` workers (0 means the global pool).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_is_thread_count_independent() {
        let run = || {
            reduce_walkers(
                10_000,
                || 0.0f64,
                |acc, w| *acc += 1.0 / (1.0 + w as f64).powf(1.3),
                |a, b| *a += b,
            )
        };
        let one = with_threads(1, run);
        let three = with_threads(3, run);
        assert_eq!(one.to_bits(), three.to_bits());
    }

    #[test]
    fn empty_reduction_is_init() {
        assert_eq!(reduce_walkers(0, || 7u64, |a, _| *a += 1, |a, b| *a += b), 7);
    }
}
