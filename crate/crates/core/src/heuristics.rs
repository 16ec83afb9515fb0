//! Decision rules classifying crack and refine candidates.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::Metric;
use crate::error::{Error, Result};
use crate::ivf::VisitedRegion;
use crate::state::IndexState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicParams {
    /// A crack must steal at least this many points.
    pub min_pts: usize,
    /// Minimum average points per crack in a local region after adding a crack.
    pub pts_crack_thr: f64,
    /// Local coefficient-of-variation ceiling before a region counts as imbalanced.
    pub cv_max: f64,
    /// Percentile (0, 50) defining globally small and large cracks.
    pub size_prctl: f64,
}

impl Default for HeuristicParams {
    fn default() -> Self {
        Self {
            min_pts: 2,
            pts_crack_thr: 64.0,
            cv_max: 2.0,
            size_prctl: 10.0,
        }
    }
}

impl HeuristicParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_pts == 0 || !(self.pts_crack_thr > 0.0) || !(self.cv_max > 0.0) {
            return Err(Error::InvalidParameter("heuristic thresholds must be positive".into()));
        }
        if !(self.size_prctl > 0.0 && self.size_prctl < 50.0) {
            return Err(Error::InvalidParameter(format!("size_prctl {} not in (0, 50)", self.size_prctl)));
        }
        Ok(())
    }
}

/// Too few stolen points.
pub fn too_few_stolen(n_steal: usize, params: &HeuristicParams) -> bool {
    n_steal < params.min_pts
}

/// Adding one more crack would push the local average below the threshold.
pub fn too_dense(local_points: usize, local_cracks: usize, params: &HeuristicParams) -> bool {
    (local_points as f64) / ((local_cracks + 1) as f64) < params.pts_crack_thr
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrackCandidate {
    pub is_good: bool,
    /// Positions into the visited region (not point ids) of stealable points.
    pub steal: Vec<usize>,
    pub local_points: usize,
    pub local_cracks: usize,
}

/// Classifies a query as a crack candidate against the dynamic state.
///
/// `committed_nlist` separates committed crack ids from provisional ones;
/// provisional cracks owning any visited point count towards the local
/// crack total.
pub fn evaluate_crack_candidate(
    metric: Metric,
    region: &VisitedRegion,
    local_cracks: &[u32],
    dyn_state: &IndexState,
    committed_nlist: usize,
    params: &HeuristicParams,
) -> CrackCandidate {
    let mut steal = Vec::new();
    let mut provisional = BTreeSet::new();
    for (i, (&id, &d)) in region.ids.iter().zip(&region.distances).enumerate() {
        let p = id as usize;
        if metric.is_better(d, dyn_state.distances[p]) {
            steal.push(i);
        }
        let a = dyn_state.assignments[p];
        if a as usize >= committed_nlist {
            provisional.insert(a);
        }
    }
    let local_points = region.len();
    let local_cracks = local_cracks.len() + provisional.len();
    let is_good = !too_few_stolen(steal.len(), params) && !too_dense(local_points, local_cracks, params);
    CrackCandidate {
        is_good,
        steal,
        local_points,
        local_cracks,
    }
}

/// Population coefficient of variation; zero for an empty or all-zero input.
pub fn coefficient_of_variation(sizes: &[u32]) -> f64 {
    if sizes.is_empty() {
        return 0.0;
    }
    let n = sizes.len() as f64;
    let mean = sizes.iter().map(|&s| s as f64).sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = sizes.iter().map(|&s| (s as f64 - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank(sorted: &[u32], pct: f64) -> u32 {
    assert!(!sorted.is_empty());
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeCutoffs {
    pub low: u32,
    pub high: u32,
}

impl SizeCutoffs {
    pub fn from_histogram(histogram: &[u32], size_prctl: f64) -> Self {
        let mut sorted = histogram.to_vec();
        sorted.sort_unstable();
        Self {
            low: nearest_rank(&sorted, size_prctl),
            high: nearest_rank(&sorted, 100.0 - size_prctl),
        }
    }
}

/// Local imbalance.
pub fn locally_imbalanced(local_sizes: &[u32], params: &HeuristicParams) -> bool {
    coefficient_of_variation(local_sizes) > params.cv_max
}

/// A globally small crack sits next to a globally large one. The two must
/// actually differ in size, so a histogram with collapsed cutoffs cannot
/// fire on a uniform region.
pub fn small_next_to_large(local_sizes: &[u32], cutoffs: SizeCutoffs) -> bool {
    let smallest = local_sizes.iter().copied().min();
    let largest = local_sizes.iter().copied().max();
    match (smallest, largest) {
        (Some(s), Some(l)) => s <= cutoffs.low && l >= cutoffs.high && s < l,
        _ => false,
    }
}

pub fn evaluate_refine_candidate(local_sizes: &[u32], cutoffs: SizeCutoffs, params: &HeuristicParams) -> bool {
    locally_imbalanced(local_sizes, params) || small_next_to_large(local_sizes, cutoffs)
}
