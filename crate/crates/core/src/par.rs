//! Data-parallel helpers. With the `parallel` feature (default) work is spread
//! over rayon's pool; without it everything runs on the calling thread.
//!
//! Results never depend on the thread layout: maps preserve index order and
//! sums reduce fixed-size chunks in a fixed order.

/// Chunk size for deterministic reductions.
pub const CHUNK: usize = 256;

/// Sequential reference implementations, always available.
pub mod seq {
    pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
    where
        F: Fn(usize) -> T,
    {
        (0..n).map(f).collect()
    }
}

#[cfg(feature = "parallel")]
pub mod parallel {
    use rayon::prelude::*;

    pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).into_par_iter().map(f).collect()
    }
}

/// `(0..n).map(f)` collected in index order, in parallel when enabled.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        parallel::map_indexed(n, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        seq::map_indexed(n, f)
    }
}

/// Fallible variant of [`map_indexed`]; returns the error of the lowest index.
pub fn try_map_indexed<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indexed(n, f).into_iter().collect()
}

/// Sums `dim`-vectors `f(i)` for `i in 0..n` with a layout-independent
/// reduction order: chunk partial sums are computed (possibly in parallel)
/// and then added sequentially.
pub fn try_sum_vectors<E, F>(n: usize, dim: usize, f: F) -> Result<Vec<f64>, E>
where
    E: Send,
    F: Fn(usize, &mut [f64]) -> Result<(), E> + Sync + Send,
{
    let n_chunks = n.div_ceil(CHUNK);
    let partials = try_map_indexed(n_chunks, |c| {
        let mut acc = vec![0.0; dim];
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            f(i, &mut acc)?;
        }
        Ok(acc)
    })?;
    let mut total = vec![0.0; dim];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let v = map_indexed(1000, |i| i * i);
        assert_eq!(v, seq::map_indexed(1000, |i| i * i));
    }

    #[test]
    fn chunked_sum_matches_reference_layout() {
        let f = |i: usize, acc: &mut [f64]| -> Result<(), ()> {
            acc[0] += 1.0 / (i as f64 + 1.0);
            acc[1] += (i as f64).sin();
            Ok(())
        };
        let a = try_sum_vectors(10_000, 2, f).unwrap();
        let b = try_sum_vectors(10_000, 2, f).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
        let mut reference = vec![0.0; 2];
        for c in 0..10_000usize.div_ceil(CHUNK) {
            let mut acc = vec![0.0; 2];
            for i in c * CHUNK..((c + 1) * CHUNK).min(10_000) {
                f(i, &mut acc).unwrap();
            }
            reference[0] += acc[0];
            reference[1] += acc[1];
        }
        assert_eq!(a, reference);
    }

    #[test]
    fn first_error_wins() {
        let r: Result<Vec<usize>, usize> = try_map_indexed(100, |i| if i % 30 == 29 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(29));
    }
}
