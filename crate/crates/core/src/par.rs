//! Thin data-parallel layer. With the `parallel` feature these run on the
//! current rayon pool; without it they are plain sequential loops. Callers
//! only use order-preserving maps, so results never depend on the backend.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `(0..n).map(f).collect()`, in index order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Applies `f` to each element of `items`, preserving order.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Runs `op` with parallelism capped at `threads` (`None` = backend default).
/// Without the `parallel` feature the cap is ignored.
pub fn with_threads<R, F>(threads: Option<usize>, op: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        match threads {
            Some(t) if t > 0 => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
                Ok(pool) => pool.install(op),
                Err(_) => op(),
            },
            _ => op(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        op()
    }
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
