//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature these fan out over rayon; without it they run
//! in a plain loop. Both paths produce bit-identical results: work is split
//! into fixed chunks and partial results are always combined in index order.

/// Number of items processed per chunk in [`chunked_sum`].
pub const CHUNK: usize = 4096;

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential reference for [`map_indexed`].
pub fn map_indexed_sequential<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Sums `f(i)` for `i` in `0..n`, returning `(Σf, Σf²)`.
///
/// Each chunk of [`CHUNK`] indices is reduced in order, then chunks are
/// combined in order, so the result does not depend on scheduling.
pub fn chunked_sum<F>(n: usize, f: F) -> (f64, f64)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let partials = map_indexed(chunks, |c| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        (lo..hi).fold((0.0, 0.0), |(s, s2), i| {
            let v = f(i);
            (s + v, s2 + v * v)
        })
    });
    partials
        .into_iter()
        .fold((0.0, 0.0), |(s, s2), (a, b)| (s + a, s2 + b))
}

/// Monte-Carlo mean and standard error of `f(i)` over `n` draws.
pub fn mc_mean<F>(n: usize, f: F) -> (f64, f64)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    assert!(n > 1, "need at least two draws for a standard error");
    let (s, s2) = chunked_sum(n, f);
    let nf = n as f64;
    let mean = s / nf;
    let var = ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}
