//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over the rayon
//! pool; the mode can also be switched at runtime so benches can compare
//! both paths in one binary. Without the feature every helper runs
//! sequentially. Results are identical in either mode: work items are
//! independent and outputs are gathered in index order.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Execution strategy for data-parallel loops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

/// Currently selected strategy. Always `Sequential` without the feature.
pub fn exec() -> Exec {
    if cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed) {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

/// Selects the strategy process-wide. Ignored without the `parallel` feature.
pub fn set_exec(mode: Exec) {
    PARALLEL.store(mode == Exec::Parallel, Ordering::Relaxed);
}

/// Runs `f` with `mode` selected and restores the previous strategy.
pub fn with_exec<R>(mode: Exec, f: impl FnOnce() -> R) -> R {
    let prev = exec();
    set_exec(mode);
    let out = f();
    set_exec(prev);
    out
}

/// `(0..n).map(f).collect()`, in parallel when enabled.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec() == Exec::Parallel && n > 1 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Calls `f(i, chunk)` on consecutive `chunk_len`-sized chunks of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if exec() == Exec::Parallel && data.len() > chunk_len {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_agree() {
        let run = || {
            let mut v = vec![0u64; 1000];
            for_each_chunk_mut(&mut v, 7, |i, c| {
                for (j, x) in c.iter_mut().enumerate() {
                    *x = (i * 7 + j) as u64 * 3;
                }
            });
            (v, map_indexed(100, |i| i * i))
        };
        let a = with_exec(Exec::Sequential, run);
        let b = with_exec(Exec::Parallel, run);
        assert_eq!(a, b);
        assert_eq!(a.0[999], 999 * 3);
    }
}
