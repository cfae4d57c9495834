//! Order-preserving map, parallel with the `parallel` feature.

#[cfg(feature = "parallel")]
pub(crate) fn map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

pub(crate) fn map_indexed<T: Sync, R: Send>(items: &[T], f: impl Fn(usize, &T) -> R + Sync + Send) -> Vec<R> {
    let idx: Vec<usize> = (0..items.len()).collect();
    map(&idx, |&k| f(k, &items[k]))
}

/// Runs `f` on `0..n` and collects the results in index order, stopping
/// at the first error.
pub(crate) fn try_range<R: Send>(n: usize, f: impl Fn(usize) -> crate::Result<R> + Sync + Send) -> crate::Result<Vec<R>> {
    let idx: Vec<usize> = (0..n).collect();
    map(&idx, |&k| f(k)).into_iter().collect()
}
