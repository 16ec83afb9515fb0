//! Microbenchmarks that time each build kernel in isolation over a grid of
//! sizes, producing samples for [`crate::cost_model::fit`].

use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost_model::{kernel_features, Kernel, KernelInputs, KernelSample};
use crate::data::{Metric, VectorSet};
use crate::error::{Error, Result};
use crate::ivf::{init_coarse, IvfIndex, Move};
use crate::kernels::{self, LocalRegion};
use crate::kmeans::{self, KmeansConfig};
use crate::state::IndexState;

#[derive(Debug, Clone, PartialEq)]
pub struct MicrobenchGrid {
    /// Target point counts per sample (|P_local|, moved points, |P|).
    pub sizes: Vec<usize>,
    /// Index sizes; paired positionally with `local_cracks`.
    pub nlists: Vec<usize>,
    pub local_cracks: Vec<usize>,
    pub repeats: usize,
    /// Timed runs per sample; the median is recorded.
    pub timings: usize,
    pub kmeans: KmeansConfig,
}

impl MicrobenchGrid {
    /// Ten log-spaced sizes spanning two orders of magnitude of `n`, three
    /// index sizes: 30 samples per kernel (60 for the region lookup, which
    /// has a CRACK and a REFINE flavor).
    pub fn for_dataset(n: usize) -> Self {
        let hi = (n / 2).max(2);
        let lo = (hi / 100).max(1);
        let steps = 10;
        let ratio = (hi as f64 / lo as f64).powf(1.0 / (steps - 1) as f64);
        let sizes = (0..steps).map(|i| ((lo as f64) * ratio.powi(i)).round() as usize).collect();
        let nlists = [8usize, 32, 128].iter().map(|&c| c.min((n / 4).max(1))).collect();
        Self {
            sizes,
            nlists,
            local_cracks: vec![2, 4, 8],
            repeats: 1,
            timings: 7,
            kmeans: KmeansConfig::local(0),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.sizes.is_empty() || self.nlists.is_empty() || self.repeats == 0 || self.timings == 0 {
            return Err(Error::InvalidParameter("empty microbenchmark grid".into()));
        }
        if self.local_cracks.len() != self.nlists.len() {
            return Err(Error::InvalidParameter("nlists and local_cracks must pair up".into()));
        }
        if let Some(&s) = self.sizes.iter().find(|&&s| s == 0 || s > n) {
            return Err(Error::InvalidParameter(format!("grid size {s} not realizable on {n} points")));
        }
        for (&nl, &cl) in self.nlists.iter().zip(&self.local_cracks) {
            if nl == 0 || nl > n || cl == 0 || cl > nl {
                return Err(Error::InvalidParameter(format!("grid index size {nl} / local {cl} not realizable")));
            }
        }
        Ok(())
    }

    pub fn samples_per_kernel(&self) -> usize {
        self.sizes.len() * self.nlists.len() * self.repeats
    }
}

/// Median wall time of `times` runs of `run` after one untimed warm-up,
/// each on a fresh `setup()` value, with the output of the last run.
fn timed<S, T>(times: usize, mut setup: impl FnMut() -> S, mut run: impl FnMut(S) -> Result<T>) -> Result<(f64, T)> {
    run(setup())?;
    let mut secs = Vec::with_capacity(times);
    let mut last = None;
    for _ in 0..times {
        let input = setup();
        let t = Instant::now();
        last = Some(run(input)?);
        secs.push(t.elapsed().as_secs_f64());
    }
    secs.sort_by(f64::total_cmp);
    Ok((secs[secs.len() / 2], last.expect("at least one timing")))
}

fn sample(kernel: Kernel, inputs: &KernelInputs, secs: f64) -> KernelSample {
    let (compute, movement) = kernel_features(kernel, inputs);
    KernelSample {
        kernel,
        compute,
        movement,
        seconds: secs.max(1e-9),
    }
}

/// The `want` lists nearest to a random data point, then the region
/// truncated to `size` points.
fn local_region(index: &IvfIndex, data: &VectorSet, want: usize, size: usize, rng: &mut ChaCha8Rng) -> (Vec<u32>, LocalRegion) {
    let anchor = data.row(rng.random_range(0..data.len()));
    let lists = index.probe(anchor, want);
    let mut region = kernels::gather_lists(index, &lists);
    if region.ids.len() > size {
        let dim = data.dim();
        region.ids.truncate(size);
        region.sources.truncate(size);
        region.points = region.points.select(&(0..size).collect::<Vec<_>>());
        debug_assert_eq!(region.points.len() * dim, size * dim);
    }
    (lists, region)
}

/// Runs every kernel over the grid and returns the timed samples.
pub fn run_microbenchmarks(data: &VectorSet, metric: Metric, grid: &MicrobenchGrid, seed: u64) -> Result<Vec<KernelSample>> {
    grid.validate(data.len())?;
    let n = data.len();
    let dim = data.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let bases: Vec<(IvfIndex, IndexState)> = grid
        .nlists
        .iter()
        .map(|&nl| init_coarse(data, nl, metric, 0, seed ^ nl as u64))
        .collect::<Result<_>>()?;

    for _ in 0..grid.repeats {
        for (j, (base, state)) in bases.iter().enumerate() {
            let nl = base.nlist();
            let cl = grid.local_cracks[j];
            for &size in &grid.sizes {
                // Region lookup, REFINE flavor: copy whole lists.
                let anchor = data.row(rng.random_range(0..n));
                let want = (size * nl).div_ceil(n).clamp(1, nl);
                let lists = base.probe(anchor, want);
                let (secs, region) = timed(grid.timings, || (), |_| Ok(kernels::gather_lists(base, &lists)))?;
                let inputs = KernelInputs {
                    n_points: n,
                    nlist: nl,
                    dim,
                    buffered: 1,
                    local_points: region.ids.len(),
                    ..Default::default()
                };
                out.push(sample(Kernel::GetLocalRegion, &inputs, secs));

                // Region lookup, CRACK flavor: random ids from the base data.
                let ids: Vec<u32> = index::sample(&mut rng, n, size).into_iter().map(|i| i as u32).collect();
                let buffered = size.div_ceil(64);
                let (secs, pts) = timed(grid.timings, || (), |_| Ok(kernels::gather_points(data, &ids)))?;
                debug_assert_eq!(pts.len(), size);
                let inputs = KernelInputs {
                    buffered,
                    local_points: size,
                    nlist: nl + buffered,
                    ..inputs
                };
                out.push(sample(Kernel::GetLocalRegion, &inputs, secs));

                // Commit with tracked assignments: move `size` points into new lists.
                let mut new_centroids = Vec::with_capacity(buffered * dim);
                for &id in &ids[..buffered] {
                    new_centroids.extend_from_slice(data.row(id as usize));
                }
                let moves: Vec<Move> = ids
                    .iter()
                    .enumerate()
                    .map(|(i, &id)| Move {
                        id,
                        from: state.assignments[id as usize],
                        to: (nl + i % buffered) as u32,
                    })
                    .collect();
                let (secs, _) = timed(grid.timings, || base.clone(), |mut idx| {
                    kernels::commit_reorg_with_dyn(&mut idx, &new_centroids, &moves)
                })?;
                out.push(sample(Kernel::CommitReorgWithDyn, &inputs, secs));

                // Full centroid recomputation over an index of `size` points.
                let rows: Vec<usize> = index::sample(&mut rng, n, size).into_vec();
                let sub = data.select(&rows);
                let (small, _) = init_coarse(&sub, nl.min(size), metric, 0, seed)?;
                let all: Vec<u32> = (0..small.nlist() as u32).collect();
                let (secs, _) = timed(grid.timings, || small.clone(), |mut idx| {
                    kernels::update_centroids(&mut idx, &all, grid.kmeans.spherical);
                    Ok(())
                })?;
                let inputs = KernelInputs {
                    n_points: size,
                    nlist: small.nlist(),
                    dim,
                    ..Default::default()
                };
                out.push(sample(Kernel::UpdateCentroids, &inputs, secs));

                // Local k-means, then reassignment of the region.
                let (lists, region) = local_region(base, data, cl, size, &mut rng);
                let cfg = KmeansConfig {
                    seed: rng.random(),
                    ..grid.kmeans
                };
                let (secs, report) = timed(grid.timings, || (), |_| kernels::local_kmeans(&region, base, &lists, &cfg))?;
                let inputs = KernelInputs {
                    n_points: n,
                    nlist: nl,
                    dim,
                    local_points: region.ids.len(),
                    local_cracks: lists.len(),
                    train_points: kmeans::training_size(region.ids.len(), lists.len(), cfg.max_points),
                    n_iter: cfg.n_iter,
                    ..Default::default()
                };
                out.push(sample(Kernel::LocalKmeans, &inputs, secs));

                let (secs, _) = timed(grid.timings, || base.clone(), |mut idx| {
                    kernels::commit_reorg_without_dyn(&mut idx, &region, &lists, &report.centroids, metric)
                })?;
                out.push(sample(Kernel::CommitReorgWithoutDyn, &inputs, secs));
            }
        }
    }
    Ok(out)
}

/// Per kernel: (min, max) of the compute and movement features.
pub fn feature_ranges(samples: &[KernelSample]) -> Vec<(Kernel, (f64, f64), (f64, f64))> {
    Kernel::ALL
        .iter()
        .filter_map(|&k| {
            let rows: Vec<_> = samples.iter().filter(|s| s.kernel == k).collect();
            if rows.is_empty() {
                return None;
            }
            let range = |f: &dyn Fn(&KernelSample) -> f64| {
                rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(f(s)), hi.max(f(s))))
            };
            Some((k, range(&|s| s.compute), range(&|s| s.movement)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts_and_validation() {
        let g = MicrobenchGrid::for_dataset(10_000);
        assert_eq!(g.sizes.len(), 10);
        assert_eq!(g.samples_per_kernel(), 30);
        assert!(*g.sizes.last().unwrap() as f64 / g.sizes[0] as f64 >= 99.0);
        assert!(g.validate(10_000).is_ok());
        assert!(g.validate(100).is_err());
    }

    #[test]
    fn small_run_yields_samples_for_every_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = VectorSet::new((0..2000 * 4).map(|_| rng.random_range(-1.0..1.0)).collect(), 4).unwrap();
        let grid = MicrobenchGrid {
            sizes: vec![20, 200],
            nlists: vec![4, 16],
            local_cracks: vec![2, 3],
            repeats: 1,
            timings: 3,
            kmeans: KmeansConfig::local(0),
        };
        let samples = run_microbenchmarks(&data, Metric::L2, &grid, 3).unwrap();
        for k in Kernel::ALL {
            let n = samples.iter().filter(|s| s.kernel == k).count();
            let want = if k == Kernel::GetLocalRegion { 8 } else { 4 };
            assert_eq!(n, want, "{k}");
        }
        assert!(samples.iter().all(|s| s.seconds > 0.0 && s.compute >= 0.0 && s.movement >= 0.0));
        assert_eq!(feature_ranges(&samples).len(), 5);
    }
}
