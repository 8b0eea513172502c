//! Sequential/parallel switch for the crate's data-parallel loops.
//!
//! With the `parallel` feature (default) these helpers dispatch to rayon;
//! without it they are ordinary iterators. Results are always returned in
//! input order, so outputs are identical under both builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// True when the crate was built with rayon support.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
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

/// Maps `f` over `0..len`, preserving order.
pub fn map_range<U, F>(len: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

/// Like [`map_range`] for fallible closures; the first error in index order
/// is returned.
pub fn try_map_range<U, E, F>(len: usize, f: F) -> Result<Vec<U>, E>
where
    U: Send,
    E: Send,
    F: Fn(usize) -> Result<U, E> + Sync + Send,
{
    map_range(len, f).into_iter().collect()
}

/// Splits `out` into consecutive blocks of the given lengths and runs
/// `f(block_index, block)` on each.
pub fn for_each_block_mut<F>(out: &mut [f64], out_lens: &[usize], f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let mut chunks: Vec<&mut [f64]> = Vec::with_capacity(out_lens.len());
    let mut rest = out;
    for &len in out_lens {
        let (head, tail) = rest.split_at_mut(len);
        chunks.push(head);
        rest = tail;
    }
    #[cfg(feature = "parallel")]
    {
        chunks
            .into_par_iter()
            .enumerate()
            .for_each(|(j, c)| f(j, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        chunks.into_iter().enumerate().for_each(|(j, c)| f(j, c));
    }
}
