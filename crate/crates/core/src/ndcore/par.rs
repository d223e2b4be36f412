// Row-parallel helpers. Each row is computed independently by the same code,
// so the parallel and sequential builds produce bitwise-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many output elements rows are processed on the calling thread.
const PAR_THRESHOLD: usize = 1 << 14;

pub(crate) fn for_each_row_mut<T, F>(out: &mut [T], row_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if row_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if out.len() >= PAR_THRESHOLD {
            out.par_chunks_mut(row_len)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
            return;
        }
    }
    let _ = PAR_THRESHOLD;
    out.chunks_mut(row_len)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// Ordered map over an index range; results keep index order.
pub(crate) fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
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
