//! Execution strategy for the data-parallel loops (batch attacks, dataset
//! evaluation, Monte-Carlo trials).
//!
//! Results are always collected in index order, so a parallel run is
//! bit-identical to a sequential one. Without the `parallel` feature
//! [`Exec::Parallel`] silently runs sequentially.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// `f(0), f(1), ..., f(n-1)` in order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Send + Sync,
    {
        match self {
            Exec::Sequential => (0..n).map(f).collect(),
            Exec::Parallel => par_map_range(n, f),
        }
    }

    pub fn map_slice<'a, S, T, F>(self, items: &'a [S], f: F) -> Vec<T>
    where
        S: Sync,
        T: Send,
        F: Fn(&'a S) -> T + Send + Sync,
    {
        self.map_range(items.len(), |i| f(&items[i]))
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

#[cfg(feature = "parallel")]
fn par_map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    (0..n).map(f).collect()
}

/// Runs `f` inside a pool of `jobs` threads (or directly when `jobs <= 1`
/// or the `parallel` feature is off).
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce(Exec) -> R + Send) -> R {
    if jobs <= 1 {
        return f(Exec::Sequential);
    }
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            Ok(pool) => pool.install(|| f(Exec::Parallel)),
            Err(_) => f(Exec::Parallel),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        f(Exec::Sequential)
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from a master seed, a stream tag and an
/// index. Used to give every record, trial chunk and network its own RNG.
pub fn derive_seed(master: u64, stream: &str, index: u64) -> u64 {
    let mut h = mix(master);
    for b in stream.bytes() {
        h = mix(h ^ u64::from(b));
    }
    mix(h ^ mix(index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_sequential_order() {
        let f = |i: usize| (i * i) as u64 ^ derive_seed(3, "t", i as u64);
        assert_eq!(Exec::Sequential.map_range(500, f), Exec::Parallel.map_range(500, f));
    }

    #[test]
    fn seeds_differ_by_stream_and_index() {
        let a = derive_seed(1, "attack", 0);
        assert_eq!(a, derive_seed(1, "attack", 0));
        assert_ne!(a, derive_seed(1, "attack", 1));
        assert_ne!(a, derive_seed(1, "trial", 0));
        assert_ne!(a, derive_seed(2, "attack", 0));
    }

    #[test]
    fn with_jobs_one_is_sequential() {
        assert_eq!(with_jobs(1, |e| e), Exec::Sequential);
    }
}
