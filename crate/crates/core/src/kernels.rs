//! The building blocks of CRACK and REFINE. The engine and the
//! microbenchmarks call the same functions, so fitted costs describe the
//! code that actually runs.

use crate::data::{Metric, VectorSet};
use crate::error::Result;
use crate::ivf::{IvfIndex, Move};
use crate::kmeans::{self, KmeansConfig, KmeansReport};

/// Points of a set of inverted lists, with the list each came from.
#[derive(Debug, Clone)]
pub struct LocalRegion {
    pub ids: Vec<u32>,
    pub sources: Vec<u32>,
    pub points: VectorSet,
}

/// Get Local Region for REFINE: copies out the given lists.
pub fn gather_lists(index: &IvfIndex, lists: &[u32]) -> LocalRegion {
    let total: usize = lists.iter().map(|&c| index.list(c as usize).len()).sum();
    let mut ids = Vec::with_capacity(total);
    let mut sources = Vec::with_capacity(total);
    let mut data = Vec::with_capacity(total * index.dim());
    for &c in lists {
        let list = index.list(c as usize);
        ids.extend_from_slice(list.ids());
        sources.extend(std::iter::repeat_n(c, list.len()));
        data.extend_from_slice(list.vectors());
    }
    LocalRegion {
        ids,
        sources,
        points: VectorSet::from_parts(data, index.dim()),
    }
}

/// Get Local Region for CRACK: the vectors of the given point ids.
pub fn gather_points(base: &VectorSet, ids: &[u32]) -> VectorSet {
    let mut data = Vec::with_capacity(ids.len() * base.dim());
    for &id in ids {
        data.extend_from_slice(base.row(id as usize));
    }
    VectorSet::from_parts(data, base.dim())
}

/// Component-wise mean, accumulated in f64. `None` for no rows.
pub fn mean_of<'a>(rows: impl IntoIterator<Item = &'a [f32]>, dim: usize, spherical: bool) -> Option<Vec<f32>> {
    let mut acc = vec![0.0f64; dim];
    let mut n = 0usize;
    for r in rows {
        for (a, &x) in acc.iter_mut().zip(r) {
            *a += x as f64;
        }
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let mut mean: Vec<f64> = acc.into_iter().map(|a| a / n as f64).collect();
    if spherical {
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            mean.iter_mut().for_each(|x| *x /= norm);
        }
    }
    Some(mean.into_iter().map(|x| x as f32).collect())
}

/// Update Centroids: each listed representative becomes the mean of its
/// list. Empty lists keep their representative.
pub fn update_centroids(index: &mut IvfIndex, lists: &[u32], spherical: bool) {
    let dim = index.dim();
    for &c in lists {
        let c = c as usize;
        if let Some(m) = mean_of(index.list(c).vectors().chunks_exact(dim), dim, spherical) {
            index.set_centroid(c, &m);
        }
    }
}

/// Commit Reorg with tracked assignments: append the new lists and apply
/// the buffered moves.
pub fn commit_reorg_with_dyn(index: &mut IvfIndex, new_centroids: &[f32], moves: &[Move]) -> Result<()> {
    index.apply_reorg(new_centroids, moves)
}

/// Local K-Means: warm-started training over the region.
pub fn local_kmeans(region: &LocalRegion, index: &IvfIndex, lists: &[u32], cfg: &KmeansConfig) -> Result<KmeansReport> {
    let mut init = Vec::with_capacity(lists.len() * index.dim());
    for &c in lists {
        init.extend_from_slice(index.centroid(c as usize));
    }
    kmeans::local_kmeans_train(&region.points, &init, cfg, index.metric())
}

/// Result of reassigning a region to refined representatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Reassignment {
    /// New list id per region point.
    pub lists: Vec<u32>,
    pub distances: Vec<f32>,
    pub moved: usize,
}

/// Commit Reorg without tracked assignments: install `refined` as the
/// representatives of `lists`, assign every region point to its nearest
/// one, and relocate storage accordingly.
pub fn commit_reorg_without_dyn(
    index: &mut IvfIndex,
    region: &LocalRegion,
    lists: &[u32],
    refined: &[f32],
    metric: Metric,
) -> Result<Reassignment> {
    let dim = index.dim();
    let (local, distances) = kmeans::assign(metric, &region.points, refined);
    let targets: Vec<u32> = local.iter().map(|&j| lists[j as usize]).collect();
    let moves: Vec<Move> = region
        .ids
        .iter()
        .zip(&region.sources)
        .zip(&targets)
        .filter(|((_, from), to)| from != to)
        .map(|((&id, &from), &to)| Move { id, from, to })
        .collect();
    index.apply_reorg(&[], &moves)?;
    for (j, &c) in lists.iter().enumerate() {
        index.set_centroid(c as usize, &refined[j * dim..(j + 1) * dim]);
    }
    Ok(Reassignment {
        lists: targets,
        distances,
        moved: moves.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ivf::init_coarse;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn points(n: usize, dim: usize, seed: u64) -> VectorSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VectorSet::new((0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect(), dim).unwrap()
    }

    #[test]
    fn gather_returns_list_contents_in_order() {
        let pts = points(100, 3, 1);
        let (idx, _) = init_coarse(&pts, 5, Metric::L2, 0, 2).unwrap();
        let r = gather_lists(&idx, &[3, 1]);
        let want: Vec<u32> = idx.list(3).ids().iter().chain(idx.list(1).ids()).copied().collect();
        assert_eq!(r.ids, want);
        for (i, &id) in r.ids.iter().enumerate() {
            assert_eq!(r.points.row(i), pts.row(id as usize));
        }
        assert_eq!(gather_points(&pts, &[7, 2]).row(1), pts.row(2));
    }

    #[test]
    fn update_centroids_takes_list_means() {
        let pts = points(60, 2, 3);
        let (mut idx, st) = init_coarse(&pts, 3, Metric::L2, 0, 4).unwrap();
        update_centroids(&mut idx, &[0, 1, 2], false);
        for c in 0..3 {
            let members: Vec<usize> = (0..60).filter(|&p| st.assignments[p] == c as u32).collect();
            for j in 0..2 {
                let m = members.iter().map(|&p| pts.row(p)[j] as f64).sum::<f64>() / members.len() as f64;
                assert!((idx.centroid(c)[j] as f64 - m).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn reassignment_moves_only_changed_points() {
        let pts = points(200, 2, 5);
        let (mut idx, _) = init_coarse(&pts, 4, Metric::L2, 0, 6).unwrap();
        let region = gather_lists(&idx, &[0, 2]);
        let refined: Vec<f32> = [0usize, 2].iter().flat_map(|&c| idx.centroid(c).to_vec()).collect();
        let before = idx.clone();
        let r = commit_reorg_without_dyn(&mut idx, &region, &[0, 2], &refined, Metric::L2).unwrap();
        // Same representatives: every point already sits in its nearest list.
        assert_eq!(r.moved, 0);
        assert_eq!(idx, before);
    }
}
