//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature (default) [`map_indexed`] fans out over the
//! rayon pool; without it, or inside [`with_mode`]`(ExecMode::Sequential, ..)`,
//! it is a plain loop. Results are always returned in index order, so the
//! output never depends on scheduling.

use std::cell::Cell;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Parallel,
    Sequential,
}

thread_local! {
    static MODE: Cell<ExecMode> = const { Cell::new(ExecMode::Parallel) };
}

/// Run `f` with the calling thread's execution mode set to `mode`.
pub fn with_mode<R>(mode: ExecMode, f: impl FnOnce() -> R) -> R {
    let prev = MODE.with(|m| m.replace(mode));
    let out = f();
    MODE.with(|m| m.set(prev));
    out
}

pub fn current_mode() -> ExecMode {
    if cfg!(feature = "parallel") {
        MODE.with(|m| m.get())
    } else {
        ExecMode::Sequential
    }
}

/// `(0..n).map(f).collect()`, parallel when enabled.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match current_mode() {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Configure the global worker pool. Returns an error message when the pool
/// was already initialized.
pub fn set_threads(n: usize) -> std::result::Result<(), String> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = map_indexed(1000, f);
        let b = with_mode(ExecMode::Sequential, || map_indexed(1000, f));
        assert_eq!(a, b);
        assert_eq!(current_mode(), if cfg!(feature = "parallel") { ExecMode::Parallel } else { ExecMode::Sequential });
    }
}
