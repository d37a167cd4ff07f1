//! Worker-pool helper honoring the `DWBC_GUARD_THREADS` cap.
//!
//! Results are collected by index, so output is identical for any thread
//! count (0 or unset = one worker per available core).

use std::thread;

pub(crate) fn thread_cap() -> usize {
    let auto = thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var("DWBC_GUARD_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) | Err(_) => auto,
            Ok(n) => n,
        },
        Err(_) => auto,
    }
}

/// Applies `f` to `0..n`, fanning out over at most `thread_cap()` workers.
/// The result vector is ordered by index regardless of scheduling.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = thread_cap().min(n).max(1);
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(workers);
    let mut out: Vec<Vec<T>> = Vec::with_capacity(workers);
    thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            let lo = w * chunk;
            let hi = ((w + 1) * chunk).min(n);
            let f = &f;
            handles.push(scope.spawn(move || (lo..hi).map(f).collect::<Vec<T>>()));
        }
        for h in handles {
            out.push(h.join().expect("worker panicked"));
        }
    });
    out.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_index_order() {
        let v = map_indexed(100, |i| i * i);
        assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }
}
