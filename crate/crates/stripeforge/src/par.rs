/// Maps `f` over `0..count` on up to `threads` scoped threads. Output order
/// does not depend on the thread count.
pub(crate) fn par_map<R: Send>(count: usize, threads: usize, f: impl Fn(usize) -> R + Sync) -> Vec<R> {
    if threads <= 1 || count < 2 {
        return (0..count).map(f).collect();
    }
    let chunk = count.div_ceil(threads);
    let f = &f;
    std::thread::scope(|sc| {
        let handles: Vec<_> = (0..count)
            .step_by(chunk)
            .map(|start| sc.spawn(move || (start..(start + chunk).min(count)).map(f).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}
