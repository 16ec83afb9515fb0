//! Distance kernels and the process-wide distance-computation counter.
//!
//! Every kernel that evaluates many distances at once goes through
//! [`distances_to_block`] or [`batch_distances`], which add the number of
//! evaluated pairs to a relaxed atomic counter. Single-pair helpers are
//! uncounted.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::data::{Metric, VectorSet};
use crate::error::{Error, Result};

static DISTANCE_COMPUTATIONS: AtomicU64 = AtomicU64::new(0);

/// Total number of counted distance evaluations since process start.
pub fn distance_computations() -> u64 {
    DISTANCE_COMPUTATIONS.load(Ordering::Relaxed)
}

#[inline]
pub(crate) fn count(n: u64) {
    DISTANCE_COMPUTATIONS.fetch_add(n, Ordering::Relaxed);
}

const LANES: usize = 8;

/// Squared Euclidean distance.
#[inline]
pub fn l2_squared(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        let d = x - y;
        tail += d * d;
    }
    reduce(acc) + tail
}

#[inline]
pub fn inner_product(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    reduce(acc) + tail
}

#[inline]
fn reduce(acc: [f32; LANES]) -> f32 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

/// Appends `metric(query, row)` for every row of the contiguous `block` to `out`.
pub fn distances_to_block(metric: Metric, query: &[f32], block: &[f32], dim: usize, out: &mut Vec<f32>) {
    let n = block.len() / dim;
    out.reserve(n);
    match metric {
        Metric::L2 => out.extend(block.chunks_exact(dim).map(|row| l2_squared(query, row))),
        Metric::InnerProduct => out.extend(block.chunks_exact(dim).map(|row| inner_product(query, row))),
    }
    count(n as u64);
}

/// Full `|queries| x |points|` distance matrix, row-major.
pub fn batch_distances(metric: Metric, queries: &VectorSet, points: &VectorSet) -> Result<Vec<f32>> {
    if queries.dim() != points.dim() {
        return Err(Error::DimensionMismatch {
            expected: points.dim(),
            found: queries.dim(),
        });
    }
    let mut out = Vec::with_capacity(queries.len() * points.len());
    for q in queries.rows() {
        distances_to_block(metric, q, points.as_slice(), points.dim(), &mut out);
    }
    Ok(out)
}
