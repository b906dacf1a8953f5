//! Row-wise execution helpers.
//!
//! All per-pixel work in this crate is independent, so we parallelize over
//! grid rows. Reductions sum per-row partials in row order, which makes the
//! parallel results bit-identical to the sequential ones.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Apply `f(iy, row)` to each `nx`-long row of `values`.
pub(crate) fn for_each_row<F>(values: &mut [f64], nx: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        values
            .par_chunks_mut(nx)
            .enumerate()
            .for_each(|(iy, row)| f(iy, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        values.chunks_mut(nx).enumerate().for_each(|(iy, row)| f(iy, row));
    }
}

/// Like [`for_each_row`] but with a per-worker scratch value created by
/// `init`; `f` also returns a per-row partial stored into `partials[iy]`,
/// which callers sum in row order.
pub(crate) fn rows_with_partials<S, I, F>(
    values: &mut [f64],
    partials: &mut [f64],
    nx: usize,
    init: I,
    f: F,
) where
    S: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize, &mut [f64]) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        values
            .par_chunks_mut(nx)
            .zip(partials.par_iter_mut())
            .enumerate()
            .for_each_init(&init, |s, (iy, (row, p))| *p = f(s, iy, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut s = init();
        values
            .chunks_mut(nx)
            .zip(partials.iter_mut())
            .enumerate()
            .for_each(|(iy, (row, p))| *p = f(&mut s, iy, row));
    }
}

/// Sum `f(iy)` over rows, accumulating partials in row order.
pub(crate) fn row_sums<F>(ny: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        let partials: Vec<f64> = (0..ny).into_par_iter().map(f).collect();
        partials.iter().sum()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..ny).map(f).sum()
    }
}
