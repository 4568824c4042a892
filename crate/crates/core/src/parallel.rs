//! Deterministic fan-out over independent trajectories.
//!
//! Trajectory `i` of sweep point `j` is always seeded with
//! `base_seed + j·10⁶ + i`, and results come back in input order, so the
//! output does not depend on the number of workers.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Seed stride between sweep points.
pub const POINT_STRIDE: u64 = 1_000_000;

pub fn trajectory_seed(base_seed: u64, point: usize, trajectory: usize) -> u64 {
    base_seed
        .wrapping_add(point as u64 * POINT_STRIDE)
        .wrapping_add(trajectory as u64)
}

/// Worker count from an explicit value, else `SPINFILTER_WORKERS`, else the
/// number of logical cores.
pub fn resolve_workers(explicit: Option<usize>) -> usize {
    explicit
        .or_else(|| std::env::var("SPINFILTER_WORKERS").ok()?.trim().parse().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Maps `f` over `items` on a pool of `workers` threads, preserving order.
pub fn map_ordered<I, T, F>(items: Vec<I>, workers: usize, f: F) -> Result<Vec<T>>
where
    I: Send,
    T: Send,
    F: Fn(I) -> T + Sync + Send,
{
    if workers <= 1 {
        return Ok(items.into_iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::param("workers", e.to_string()))?;
    Ok(pool.install(|| items.into_par_iter().map(f).collect()))
}
