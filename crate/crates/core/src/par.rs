//! Job-level parallelism.
//!
//! Every parallel entry point here has a sequential twin selected by
//! [`Execution`]. When the crate is built without the `parallel` feature,
//! [`Execution::Parallel`] silently degrades to sequential execution.
//! Results are always returned in input order.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether jobs will actually be spread over a thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

pub fn num_threads() -> usize {
    #[cfg(feature = "parallel")]
    return rayon::current_num_threads();

    #[cfg(not(feature = "parallel"))]
    return 1;
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }

    let _ = exec;
    items.iter().map(f).collect()
}

/// Maps `f` over contiguous chunks of `items`, preserving chunk order.
pub fn map_chunks<T, R, F>(exec: Execution, items: &[T], chunk_size: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &[T]) -> R + Sync + Send,
{
    let chunk_size = chunk_size.max(1);

    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items
            .par_chunks(chunk_size)
            .enumerate()
            .map(|(i, c)| f(i * chunk_size, c))
            .collect();
    }

    let _ = exec;
    items
        .chunks(chunk_size)
        .enumerate()
        .map(|(i, c)| f(i * chunk_size, c))
        .collect()
}

pub fn join<A, B, RA, RB>(exec: Execution, oper_a: A, oper_b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return rayon::join(oper_a, oper_b);
    }

    let _ = exec;
    (oper_a(), oper_b())
}

/// Runs `op` inside a dedicated pool of `workers` threads. `None` uses the
/// global pool.
pub fn with_workers<R, F>(workers: Option<usize>, op: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    if let Some(n) = workers {
        match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => return pool.install(op),
            Err(e) => log::warn!("could not build a {n}-thread pool ({e}); using the global pool"),
        }
    }

    let _ = workers;
    op()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order_in_both_modes() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = map(Execution::Sequential, &items, |x| x * x);
        let par = map(Execution::Parallel, &items, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq[999], 999 * 999);
    }

    #[test]
    fn map_chunks_reports_offsets() {
        let items: Vec<usize> = (0..10).collect();
        let firsts = map_chunks(Execution::Parallel, &items, 4, |off, c| (off, c[0]));
        assert_eq!(firsts, vec![(0, 0), (4, 4), (8, 8)]);
    }

    #[test]
    fn pool_of_two() {
        let r = with_workers(Some(2), || map(Execution::Parallel, &[1, 2, 3], |x| x + 1));
        assert_eq!(r, vec![2, 3, 4]);
    }
}
