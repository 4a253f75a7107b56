//! Data-parallel building blocks with a sequential fallback.
//!
//! Every helper here computes a result that is independent of the thread
//! schedule: per-element work touches disjoint slots, and reductions use a
//! total order, so the `parallel` feature changes throughput only.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Minimum slice length before fanning out; below this rayon overhead wins.
const PAR_THRESHOLD: usize = 1024;

/// Applies `f(i, &mut data[i])` to every element.
pub(crate) fn for_each_indexed<T, F>(data: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if data.len() >= PAR_THRESHOLD {
        data.par_iter_mut().enumerate().for_each(|(i, v)| f(i, v));
        return;
    }
    for (i, v) in data.iter_mut().enumerate() {
        f(i, v);
    }
}

/// Collects `f(0), ..., f(n-1)` in index order. Meant for cheap per-element
/// work; short inputs stay sequential.
pub(crate) fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if n >= PAR_THRESHOLD {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Like [`map_collect`] but for coarse tasks (whole queries, whole test
/// instances), where even two elements are worth fanning out.
pub(crate) fn map_collect_tasks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if n >= 2 {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Picks the best of two (gain, id) candidates: larger gain wins, exact ties
/// go to the lower id. This is a total order, so any reduction tree yields
/// the same winner.
#[inline]
fn better(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    }
}

/// Argmax of `gain(i)` over all unmasked indices, ties broken by lower id.
/// Returns `None` when every index is masked.
pub(crate) fn best_candidate<F>(n: usize, mask: &[bool], gain: F) -> Option<(usize, f64)>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    debug_assert_eq!(mask.len(), n);
    #[cfg(feature = "parallel")]
    if n >= PAR_THRESHOLD {
        return (0..n)
            .into_par_iter()
            .filter(|&i| !mask[i])
            .map(|i| (gain(i), i))
            .reduce_with(better)
            .map(|(g, i)| (i, g));
    }
    let mut best: Option<(f64, usize)> = None;
    for (i, &taken) in mask.iter().enumerate() {
        if taken {
            continue;
        }
        let cand = (gain(i), i);
        best = Some(match best {
            None => cand,
            Some(b) => better(b, cand),
        });
    }
    best.map(|(g, i)| (i, g))
}
