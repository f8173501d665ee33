//! Order-preserving parallel map on scoped threads.
//!
//! Items are split into contiguous chunks, one per thread, and results are
//! concatenated in input order. Each item is computed by the same code
//! regardless of the thread count, so outputs do not depend on it.

use std::thread;

pub fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_kept() {
        let v: Vec<u64> = (0..103).collect();
        let want: Vec<u64> = v.iter().map(|x| x * x).collect();
        for t in [1, 2, 3, 8, 500] {
            assert_eq!(par_map(&v, t, |x| x * x), want);
        }
        assert!(par_map(&[] as &[u8], 4, |x| *x).is_empty());
    }
}
