//! Indexed map helpers. The parallel build fans work out with rayon; the
//! sequential fallback runs the same closure in index order. Both paths
//! collect results in ascending index order and report the lowest-index
//! error, so output is identical at any thread count.

use crate::error::Result;

#[cfg(feature = "parallel")]
pub(crate) fn try_map_indices<U, F>(n: usize, f: F) -> Result<Vec<U>>
where
    U: Send,
    F: Fn(usize) -> Result<U> + Sync + Send,
{
    use rayon::prelude::*;
    let out: Vec<Result<U>> = (0..n).into_par_iter().map(f).collect();
    out.into_iter().collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn try_map_indices<U, F>(n: usize, f: F) -> Result<Vec<U>>
where
    U: Send,
    F: Fn(usize) -> Result<U> + Sync + Send,
{
    (0..n).map(f).collect()
}
