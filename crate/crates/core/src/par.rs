//! Deterministic fork-join helper: outputs always come back in input order,
//! so threading never changes any reduced result.

/// Map `f` over `items` on up to `threads` OS threads (0 = one per core,
/// capped by the item count). Results are returned in input order.
pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let threads = effective_threads(threads, items.len());
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let mut out: Vec<Vec<R>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| scope.spawn(|| part.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        out = handles.into_iter().map(|h| h.join().expect("worker panicked")).collect();
    });
    out.into_iter().flatten().collect()
}

pub fn effective_threads(requested: usize, work_items: usize) -> usize {
    let hw = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let t = if requested == 0 { hw } else { requested };
    t.min(work_items).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_input_order() {
        let items: Vec<usize> = (0..101).collect();
        let doubled = parallel_map(&items, 4, |&x| x * 2);
        assert_eq!(doubled, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn single_thread_matches_multi_thread() {
        let items: Vec<f64> = (0..40).map(|i| i as f64 * 0.7).collect();
        let a = parallel_map(&items, 1, |&x| (x.sin() * 1e6).round());
        let b = parallel_map(&items, 8, |&x| (x.sin() * 1e6).round());
        assert_eq!(a, b);
    }
}
