//! Order-preserving chunked map over an index range.
//!
//! Work is split into fixed-size chunks whose results come back in chunk
//! order, so a sequential fold over them gives the same floating-point
//! result whatever the number of worker threads.

use std::ops::Range;

pub(crate) const CHUNK: usize = 64;

pub(crate) fn chunks(n: usize, size: usize) -> Vec<Range<usize>> {
    (0..n.div_ceil(size)).map(|c| c * size..((c + 1) * size).min(n)).collect()
}

#[cfg(feature = "parallel")]
pub(crate) fn map_chunks<T, F>(n: usize, size: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    use rayon::prelude::*;
    chunks(n, size).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_chunks<T, F>(n: usize, size: usize, f: F) -> Vec<T>
where
    F: Fn(Range<usize>) -> T,
{
    chunks(n, size).into_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range() {
        assert_eq!(chunks(130, 64), vec![0..64, 64..128, 128..130]);
        assert!(chunks(0, 64).is_empty());
        let out = map_chunks(130, 64, |r| r.len());
        assert_eq!(out, vec![64, 64, 2]);
    }
}
