//! Thin wrappers that run site loops through rayon when the `parallel`
//! feature is enabled and fall back to sequential iteration otherwise.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map over `0..n`, collecting results in index order.
pub fn map_sites<T, F>(n: usize, f: F) -> Vec<T>
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

/// Apply `f(row_index, row_slice)` to each contiguous row of length `row_len`.
pub fn for_rows<F>(vals: &mut [num_complex::Complex64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [num_complex::Complex64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        vals.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(l, row)| f(l, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        vals.chunks_mut(row_len)
            .enumerate()
            .for_each(|(l, row)| f(l, row));
    }
}
