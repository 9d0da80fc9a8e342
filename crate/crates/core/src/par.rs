//! Index-ordered parallel map.
//!
//! Results are always returned in index order and every reduction downstream
//! walks them sequentially, so output is bit-identical for any thread count.
//! Without the `parallel` feature everything runs on the calling thread.

/// Evaluate `f(0..n)` and collect in index order.
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
        map_indexed_seq(n, f)
    }
}

/// Sequential reference implementation of [`map_indexed`].
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// `f(i, stream_i)` for `i in 0..n`, where task `i` always draws from the
/// stream with task id `i` of `domain`.
pub fn map_streams<T, F>(domain: crate::rng::SeedDomain, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut crate::rng::Stream) -> T + Sync + Send,
{
    map_indexed(n, |i| f(i, &mut domain.stream(i as u64)))
}

/// Run `op` with at most `workers` threads. `None` or `0` uses the global pool.
pub fn with_workers<R, OP>(workers: Option<usize>, op: OP) -> R
where
    R: Send,
    OP: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        match workers {
            Some(w) if w > 0 => match rayon::ThreadPoolBuilder::new().num_threads(w).build() {
                Ok(pool) => pool.install(op),
                Err(_) => op(),
            },
            _ => op(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        op()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_preserved() {
        let v = map_indexed(1000, |i| i * i);
        assert!(v.iter().enumerate().all(|(i, &x)| x == i * i));
        assert_eq!(v, map_indexed_seq(1000, |i| i * i));
    }

    #[test]
    fn worker_counts_agree() {
        let a = with_workers(Some(1), || map_indexed(257, |i| (i as f64).sqrt()));
        let b = with_workers(Some(8), || map_indexed(257, |i| (i as f64).sqrt()));
        assert_eq!(a, b);
    }
}
