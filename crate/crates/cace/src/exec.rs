//! Deterministic trial execution, parallel or sequential.
//!
//! Monte Carlo campaigns accumulate statistics over independent trials. To
//! keep results bit-identical regardless of worker count, trials are grouped
//! into fixed-size chunks: each chunk is folded sequentially in trial order,
//! chunk partials are collected in chunk order, and the final merge is a
//! sequential fold. Only the scheduling of chunks differs between the
//! parallel and sequential paths, so the floating-point association is
//! identical in both.

/// Trials per chunk. Fixed so that chunk boundaries (and therefore summation
/// order) do not depend on the worker count.
pub const CHUNK_TRIALS: u64 = 64;

/// Accumulate `n_trials` independent trials into an accumulator of type `A`.
///
/// `step` is called once per trial index with a chunk-local accumulator;
/// `merge` combines two chunk accumulators. Dispatches to rayon when the
/// `parallel` feature is enabled, otherwise runs sequentially. Both paths
/// produce bit-identical results.
pub fn accumulate_trials<A, I, S, M>(n_trials: u64, init: I, step: S, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync,
    S: Fn(&mut A, u64) + Sync,
    M: Fn(A, A) -> A,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let n_chunks = n_trials.div_ceil(CHUNK_TRIALS);
        let partials: Vec<A> = (0..n_chunks)
            .into_par_iter()
            .map(|chunk| run_chunk(chunk, n_trials, &init, &step))
            .collect();
        partials
            .into_iter()
            .fold(init(), |acc, part| merge(acc, part))
    }
    #[cfg(not(feature = "parallel"))]
    {
        accumulate_trials_sequential(n_trials, init, step, merge)
    }
}

/// Sequential reference path with the same chunk structure as
/// [`accumulate_trials`]. Always available; used by the benches to compare
/// against the parallel dispatch.
pub fn accumulate_trials_sequential<A, I, S, M>(n_trials: u64, init: I, step: S, merge: M) -> A
where
    I: Fn() -> A,
    S: Fn(&mut A, u64),
    M: Fn(A, A) -> A,
{
    let n_chunks = n_trials.div_ceil(CHUNK_TRIALS);
    (0..n_chunks)
        .map(|chunk| run_chunk(chunk, n_trials, &init, &step))
        .fold(init(), |acc, part| merge(acc, part))
}

fn run_chunk<A>(chunk: u64, n_trials: u64, init: &impl Fn() -> A, step: &impl Fn(&mut A, u64)) -> A {
    let lo = chunk * CHUNK_TRIALS;
    let hi = (lo + CHUNK_TRIALS).min(n_trials);
    let mut acc = init();
    for trial in lo..hi {
        step(&mut acc, trial);
    }
    acc
}
