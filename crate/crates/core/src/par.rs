//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature (default) work runs on a rayon pool sized to
//! the requested worker count. Without it, or with [`Parallelism::Sequential`],
//! items are processed in order on the calling thread. Output order always
//! matches input order.

/// How many concurrent executions a batch computation may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    Workers(usize),
}

impl Parallelism {
    pub fn from_workers(workers: usize) -> Self {
        if workers <= 1 {
            Parallelism::Sequential
        } else {
            Parallelism::Workers(workers)
        }
    }

    pub fn workers(self) -> usize {
        match self {
            Parallelism::Sequential => 1,
            Parallelism::Workers(n) => n.max(1),
        }
    }
}

/// True when the crate was built with rayon support.
pub const fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

pub fn map_ordered<T, U, F>(items: &[T], parallelism: Parallelism, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    match parallelism {
        Parallelism::Workers(n) if n > 1 && items.len() > 1 => parallel_map(items, n, f),
        _ => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, U, F>(items: &[T], workers: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    use rayon::prelude::*;

    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()),
        // pool creation can fail under thread limits; degrade rather than abort
        Err(_) => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, U, F>(items: &[T], _workers: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}
