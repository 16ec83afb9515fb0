//! Recall versus throughput over a range of nprobe values.

use std::time::Instant;

use anyhow::{ensure, Result};
use crackivf::{recall_at_k, IvfIndex, KnnResult, VectorSet};
use log::warn;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub nprobe: usize,
    pub recall: f64,
    pub qps: f64,
}

/// Median of `reps` timed runs per nprobe. Values above the index's list
/// count are skipped with a warning.
pub fn sweep_qps_recall(
    index: &IvfIndex,
    queries: &VectorSet,
    truth: &KnnResult,
    nprobes: &[usize],
    k: usize,
    reps: usize,
) -> Result<Vec<SweepRow>> {
    ensure!(reps >= 1, "at least one repetition");
    ensure!(truth.nrows() == queries.len(), "ground truth has {} rows for {} queries", truth.nrows(), queries.len());
    let mut rows = Vec::new();
    for &nprobe in nprobes {
        if nprobe == 0 || nprobe > index.nlist() {
            warn!("skipping nprobe {nprobe}: index has {} lists", index.nlist());
            continue;
        }
        let mut times = Vec::with_capacity(reps);
        let mut result = None;
        for _ in 0..reps {
            let t = Instant::now();
            let r = index.search_knn(queries, k, nprobe)?;
            times.push(t.elapsed().as_secs_f64());
            result = Some(r);
        }
        times.sort_by(f64::total_cmp);
        let median = times[times.len() / 2].max(1e-12);
        let recall = recall_at_k(&result.expect("reps >= 1"), truth, k)?;
        rows.push(SweepRow {
            nprobe,
            recall,
            qps: queries.len() as f64 / median,
        });
    }
    Ok(rows)
}

/// Powers of two up to `nlist`, then `nlist` itself.
pub fn default_nprobes(nlist: usize) -> Vec<usize> {
    let mut v: Vec<usize> = std::iter::successors(Some(1usize), |&x| Some(x * 2)).take_while(|&x| x < nlist).collect();
    v.push(nlist.max(1));
    v
}

/// Highest throughput among rows reaching `target` recall.
pub fn qps_at_recall(rows: &[SweepRow], target: f64) -> Option<f64> {
    rows.iter().filter(|r| r.recall >= target).map(|r| r.qps).max_by(f64::total_cmp)
}

/// Smallest nprobe whose recall lands in `[lo, hi]`.
pub fn operating_point(rows: &[SweepRow], lo: f64, hi: f64) -> Option<SweepRow> {
    rows.iter().filter(|r| (lo..=hi).contains(&r.recall)).min_by_key(|r| r.nprobe).copied()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crackivf::{build_static, exact_knn, KmeansConfig, Metric};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recall_grows_with_nprobe_and_ends_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut set = |n: usize| VectorSet::new((0..n * 8).map(|_| rng.random_range(-1.0..1.0)).collect(), 8).unwrap();
        let base = set(2000);
        let q = set(40);
        let idx = build_static(&base, 16, Metric::L2, &KmeansConfig::global(2)).unwrap();
        let truth = exact_knn(&base, &q, 10, Metric::L2).unwrap();
        let mut probes = default_nprobes(16);
        probes.push(17);
        let rows = sweep_qps_recall(&idx, &q, &truth, &probes, 10, 3).unwrap();
        assert_eq!(rows.iter().map(|r| r.nprobe).collect::<Vec<_>>(), vec![1, 2, 4, 8, 16]);
        assert!(rows.windows(2).all(|w| w[1].recall >= w[0].recall));
        assert_eq!(rows.last().unwrap().recall, 1.0);
        assert!(qps_at_recall(&rows, 1.0).is_some());
        assert!(qps_at_recall(&rows, 1.1).is_none());
    }

    #[test]
    fn operating_point_picks_smallest() {
        let rows = [
            SweepRow { nprobe: 1, recall: 0.5, qps: 9.0 },
            SweepRow { nprobe: 2, recall: 0.91, qps: 5.0 },
            SweepRow { nprobe: 4, recall: 0.94, qps: 3.0 },
        ];
        assert_eq!(operating_point(&rows, 0.9, 0.95).unwrap().nprobe, 2);
        assert_eq!(qps_at_recall(&rows, 0.9), Some(5.0));
    }
}
