//! Monte-Carlo replication harness.
//!
//! Every replication gets its own seed derived from a base seed and its
//! index, and results come back in index order, so a batch produces the
//! same output whether it runs on one thread or many. With the `parallel`
//! feature (on by default) batches are spread over the rayon pool;
//! without it they run sequentially.

use crate::error::{Error, Result};

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replication `index` under `base`.
pub fn replication_seed(base: u64, index: u64) -> u64 {
    mix64(mix64(base) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Whether batches run on the rayon pool.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Sizes the global pool; a no-op without the `parallel` feature.
pub fn set_threads(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::config("thread count must be positive"));
    }
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// `f(index, seed)` for `index < n`, in index order.
#[cfg(feature = "parallel")]
pub fn map_replications<T, F>(n: usize, base_seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, u64) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n as u64).into_par_iter().map(|i| f(i, replication_seed(base_seed, i))).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_replications<T, F>(n: usize, base_seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, u64) -> T + Sync + Send,
{
    map_replications_sequential(n, base_seed, f)
}

/// Single-threaded [`map_replications`].
pub fn map_replications_sequential<T, F>(n: usize, base_seed: u64, f: F) -> Vec<T>
where
    F: Fn(u64, u64) -> T,
{
    (0..n as u64).map(|i| f(i, replication_seed(base_seed, i))).collect()
}

/// Fallible [`map_replications`]; the first error in index order wins.
pub fn try_map_replications<T, F>(n: usize, base_seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, u64) -> Result<T> + Sync + Send,
{
    map_replications(n, base_seed, f).into_iter().collect()
}

/// Runs two closures, concurrently when parallel.
pub fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    {
        rayon::join(a, b)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (a(), b())
    }
}
