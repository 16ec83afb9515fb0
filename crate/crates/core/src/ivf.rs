//! Partition-based (IVF) index: representatives, contiguous inverted lists,
//! probe-and-scan search, and storage reorganization.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{take_top_k, KnnResult, Metric, VectorSet};
use crate::distance;
use crate::error::{Error, Result};
use crate::kmeans::{self, KmeansConfig};
use crate::state::IndexState;

/// Point ids and a copy of their vectors, stored contiguously.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InvertedList {
    ids: Vec<u32>,
    vectors: Vec<f32>,
}

impl InvertedList {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    fn push(&mut self, id: u32, v: &[f32]) {
        self.ids.push(id);
        self.vectors.extend_from_slice(v);
    }
}

/// Points scanned for one query, with their distances to it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VisitedRegion {
    pub ids: Vec<u32>,
    pub distances: Vec<f32>,
}

impl VisitedRegion {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub topk: KnnResult,
    /// Probed lists per query, nearest first.
    pub visited_cracks: Vec<Vec<u32>>,
    pub visited: Vec<VisitedRegion>,
}

/// Relocation of one point between inverted lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Move {
    pub id: u32,
    pub from: u32,
    pub to: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    dim: usize,
    metric: Metric,
    centroids: Vec<f32>,
    lists: Vec<InvertedList>,
}

impl IvfIndex {
    /// Builds lists from per-point assignments; list order follows point id.
    pub fn from_assignments(points: &VectorSet, centroids: Vec<f32>, assignments: &[u32], metric: Metric) -> Self {
        let dim = points.dim();
        let nlist = centroids.len() / dim;
        let mut lists = vec![InvertedList::default(); nlist];
        for (p, &a) in assignments.iter().enumerate() {
            lists[a as usize].push(p as u32, points.row(p));
        }
        Self {
            dim,
            metric,
            centroids,
            lists,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn nlist(&self) -> usize {
        self.lists.len()
    }

    pub fn ntotal(&self) -> usize {
        self.lists.iter().map(InvertedList::len).sum()
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn set_centroid(&mut self, c: usize, v: &[f32]) {
        self.centroids[c * self.dim..(c + 1) * self.dim].copy_from_slice(v);
    }

    pub fn list(&self, c: usize) -> &InvertedList {
        &self.lists[c]
    }

    pub fn lists(&self) -> &[InvertedList] {
        &self.lists
    }

    pub fn list_sizes(&self) -> Vec<u32> {
        self.lists.iter().map(|l| l.len() as u32).collect()
    }

    /// The `nprobe` nearest lists to `query`, nearest first (ties by list id).
    pub fn probe(&self, query: &[f32], nprobe: usize) -> Vec<u32> {
        let mut dists = Vec::with_capacity(self.nlist());
        distance::distances_to_block(self.metric, query, &self.centroids, self.dim, &mut dists);
        let mut cand: Vec<(f32, u32)> = dists.into_iter().enumerate().map(|(i, d)| (d, i as u32)).collect();
        let nprobe = nprobe.min(cand.len());
        let metric = self.metric;
        let cmp = |a: &(f32, u32), b: &(f32, u32)| metric.order(*a, *b);
        if nprobe < cand.len() {
            cand.select_nth_unstable_by(nprobe - 1, cmp);
            cand.truncate(nprobe);
        }
        cand.sort_unstable_by(cmp);
        cand.into_iter().map(|(_, c)| c).collect()
    }

    fn search_one(&self, query: &[f32], k: usize, nprobe: usize) -> ((Vec<f32>, Vec<i64>), Vec<u32>, VisitedRegion) {
        let probed = self.probe(query, nprobe);
        let total: usize = probed.iter().map(|&c| self.lists[c as usize].len()).sum();
        let mut region = VisitedRegion {
            ids: Vec::with_capacity(total),
            distances: Vec::with_capacity(total),
        };
        for &c in &probed {
            let list = &self.lists[c as usize];
            region.ids.extend_from_slice(&list.ids);
            distance::distances_to_block(self.metric, query, &list.vectors, self.dim, &mut region.distances);
        }
        let mut cand: Vec<(f32, i64)> = region
            .distances
            .iter()
            .zip(&region.ids)
            .map(|(&d, &id)| (d, id as i64))
            .collect();
        (take_top_k(self.metric, &mut cand, k), probed, region)
    }

    /// Probes the `nprobe` nearest lists per query and scans them exhaustively.
    pub fn search(&self, queries: &VectorSet, k: usize, nprobe: usize) -> Result<SearchResult> {
        self.check_query(queries, k, nprobe)?;
        let per_query: Vec<_> = (0..queries.len())
            .into_par_iter()
            .map(|qi| self.search_one(queries.row(qi), k, nprobe))
            .collect();
        let mut rows = Vec::with_capacity(per_query.len());
        let mut visited_cracks = Vec::with_capacity(per_query.len());
        let mut visited = Vec::with_capacity(per_query.len());
        for (row, probed, region) in per_query {
            rows.push(row);
            visited_cracks.push(probed);
            visited.push(region);
        }
        Ok(SearchResult {
            topk: KnnResult::from_rows(k, rows),
            visited_cracks,
            visited,
        })
    }

    /// Top-k only.
    pub fn search_knn(&self, queries: &VectorSet, k: usize, nprobe: usize) -> Result<KnnResult> {
        self.check_query(queries, k, nprobe)?;
        let rows: Vec<_> = (0..queries.len())
            .into_par_iter()
            .map(|qi| self.search_one(queries.row(qi), k, nprobe).0)
            .collect();
        Ok(KnnResult::from_rows(k, rows))
    }

    fn check_query(&self, queries: &VectorSet, k: usize, nprobe: usize) -> Result<()> {
        if self.nlist() == 0 || self.ntotal() == 0 {
            return Err(Error::EmptyIndex);
        }
        if queries.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: queries.dim(),
            });
        }
        if k == 0 || nprobe == 0 {
            return Err(Error::InvalidParameter("k and nprobe must be positive".into()));
        }
        Ok(())
    }

    /// Appends one list per row of `new_centroids`, then relocates points.
    ///
    /// Moves are validated before anything is mutated, so an error leaves the
    /// index untouched. Source lists are compacted in place preserving the
    /// order of remaining entries; moved points are appended to their targets
    /// in move order. Lists not named by any move keep their exact layout.
    pub fn apply_reorg(&mut self, new_centroids: &[f32], moves: &[Move]) -> Result<()> {
        if new_centroids.len() % self.dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: new_centroids.len() % self.dim,
            });
        }
        let old_nlist = self.nlist();
        let new_nlist = old_nlist + new_centroids.len() / self.dim;

        let mut seen = HashSet::with_capacity(moves.len());
        let mut by_source: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, m) in moves.iter().enumerate() {
            if !seen.insert(m.id) {
                return Err(Error::DuplicateMove { id: m.id });
            }
            if m.from as usize >= old_nlist {
                return Err(Error::ListOutOfRange {
                    list: m.from,
                    nlist: old_nlist,
                });
            }
            if m.to as usize >= new_nlist {
                return Err(Error::ListOutOfRange {
                    list: m.to,
                    nlist: new_nlist,
                });
            }
            if m.from != m.to {
                by_source.entry(m.from).or_default().push(i);
            }
        }

        let mut positions = vec![usize::MAX; moves.len()];
        for (&src, idxs) in &by_source {
            let list = &self.lists[src as usize];
            let where_is: HashMap<u32, usize> = list.ids.iter().enumerate().map(|(pos, &id)| (id, pos)).collect();
            for &i in idxs {
                positions[i] = *where_is.get(&moves[i].id).ok_or(Error::MisplacedPoint {
                    id: moves[i].id,
                    list: src,
                })?;
            }
        }

        // Validation done; mutate.
        self.centroids.extend_from_slice(new_centroids);
        self.lists.resize_with(new_nlist, InvertedList::default);

        let dim = self.dim;
        let mut staged: Vec<(usize, Vec<f32>)> = Vec::with_capacity(moves.len());
        for (&src, idxs) in &by_source {
            let list = &mut self.lists[src as usize];
            let mut drop = vec![false; list.len()];
            for &i in idxs {
                let pos = positions[i];
                drop[pos] = true;
                staged.push((i, list.vectors[pos * dim..(pos + 1) * dim].to_vec()));
            }
            let mut w = 0;
            for r in 0..list.ids.len() {
                if drop[r] {
                    continue;
                }
                if w != r {
                    list.ids[w] = list.ids[r];
                    list.vectors.copy_within(r * dim..(r + 1) * dim, w * dim);
                }
                w += 1;
            }
            list.ids.truncate(w);
            list.vectors.truncate(w * dim);
        }
        staged.sort_unstable_by_key(|(i, _)| *i);
        for (i, v) in staged {
            let m = moves[i];
            self.lists[m.to as usize].push(m.id, &v);
        }
        Ok(())
    }

    /// Per-point list membership derived from the lists themselves.
    pub fn assignments_from_lists(&self, npoints: usize) -> std::result::Result<Vec<u32>, String> {
        let mut owner = vec![u32::MAX; npoints];
        for (c, list) in self.lists.iter().enumerate() {
            for &id in &list.ids {
                let slot = owner
                    .get_mut(id as usize)
                    .ok_or_else(|| format!("point {id} out of range"))?;
                if *slot != u32::MAX {
                    return Err(format!("point {id} stored in lists {} and {c}", *slot));
                }
                *slot = c as u32;
            }
        }
        if let Some(p) = owner.iter().position(|&o| o == u32::MAX) {
            return Err(format!("point {p} is in no list"));
        }
        Ok(owner)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.nlist() as u32).to_le_bytes())?;
        w.write_all(&[self.metric.code()])?;
        w.write_all(&(self.ntotal() as u64).to_le_bytes())?;
        for x in &self.centroids {
            w.write_all(&x.to_le_bytes())?;
        }
        for list in &self.lists {
            w.write_all(&(list.len() as u64).to_le_bytes())?;
            for id in &list.ids {
                w.write_all(&id.to_le_bytes())?;
            }
            for x in &list.vectors {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if magic != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}")));
        }
        let dim = read_u32(r)? as usize;
        let nlist = read_u32(r)? as usize;
        let mut code = [0u8; 1];
        read_exact(r, &mut code)?;
        let metric = Metric::from_code(code[0]).ok_or_else(|| Error::Snapshot(format!("unknown metric {}", code[0])))?;
        let ntotal = read_u64(r)? as usize;
        if dim == 0 {
            return Err(Error::Snapshot("zero dimension".into()));
        }
        let centroids = read_f32s(r, nlist * dim)?;
        let mut lists = Vec::with_capacity(nlist);
        let mut seen = 0;
        for _ in 0..nlist {
            let len = read_u64(r)? as usize;
            seen += len;
            if seen > ntotal {
                return Err(Error::Snapshot("list lengths exceed header count".into()));
            }
            let mut ids = Vec::with_capacity(len);
            for _ in 0..len {
                ids.push(read_u32(r)?);
            }
            let vectors = read_f32s(r, len * dim)?;
            lists.push(InvertedList { ids, vectors });
        }
        if seen != ntotal {
            return Err(Error::Snapshot("list lengths do not match header count".into()));
        }
        Ok(Self {
            dim,
            metric,
            centroids,
            lists,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

const SNAPSHOT_MAGIC: [u8; 4] = *b"CIVF";
const SNAPSHOT_VERSION: u32 = 1;

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Snapshot("truncated".into()),
        _ => Error::Io(e),
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    read_exact(r, &mut bytes)?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Coarse starting index: `init_nlist` representatives sampled uniformly
/// from the data (optionally polished with `n_iter` k-means iterations),
/// every point assigned to its nearest one. The returned state carries the
/// assignments and distances computed while adding the points.
pub fn init_coarse(
    points: &VectorSet,
    init_nlist: usize,
    metric: Metric,
    n_iter: usize,
    seed: u64,
) -> Result<(IvfIndex, IndexState)> {
    if init_nlist == 0 {
        return Err(Error::InvalidParameter("init_nlist must be positive".into()));
    }
    if init_nlist > points.len() {
        return Err(Error::KTooLarge {
            k: init_nlist,
            available: points.len(),
        });
    }
    let centroids = if n_iter == 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = index::sample(&mut rng, points.len(), init_nlist).into_vec();
        rows.sort_unstable();
        points.select(&rows).into_inner()
    } else {
        let cfg = KmeansConfig {
            n_iter,
            ..KmeansConfig::global(seed)
        };
        kmeans::train(points, init_nlist, &cfg, metric)?
    };
    let (assignments, distances) = kmeans::assign(metric, points, &centroids);
    let index = IvfIndex::from_assignments(points, centroids, &assignments, metric);
    let state = IndexState::from_assignments(assignments, distances, init_nlist);
    Ok((index, state))
}

/// Conventional IVF-Flat: k-means-trained representatives, then full assignment.
pub fn build_static(points: &VectorSet, nlist: usize, metric: Metric, cfg: &KmeansConfig) -> Result<IvfIndex> {
    if nlist == 0 {
        return Err(Error::InvalidParameter("nlist must be positive".into()));
    }
    let centroids = kmeans::train(points, nlist, cfg, metric)?;
    let (assignments, _) = kmeans::assign(metric, points, &centroids);
    Ok(IvfIndex::from_assignments(points, centroids, &assignments, metric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::exact_knn;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_points(n: usize, dim: usize, seed: u64) -> VectorSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VectorSet::new((0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect(), dim).unwrap()
    }

    #[test]
    fn one_list_holds_everything() {
        let pts = random_points(50, 3, 1);
        let (idx, st) = init_coarse(&pts, 1, Metric::L2, 0, 7).unwrap();
        assert_eq!(idx.nlist(), 1);
        assert_eq!(st.histogram, vec![50]);
        assert_eq!(idx.list(0).len(), 50);
    }

    #[test]
    fn one_point_per_list() {
        let pts = random_points(20, 2, 2);
        let (idx, st) = init_coarse(&pts, 20, Metric::L2, 0, 3).unwrap();
        assert!(st.histogram.iter().all(|&h| h == 1));
        assert!(idx.lists().iter().all(|l| l.len() == 1));
    }

    #[test]
    fn coarse_distances_match_recomputation() {
        let pts = random_points(1000, 2, 3);
        let (idx, st) = init_coarse(&pts, 10, Metric::L2, 0, 4).unwrap();
        for p in 0..pts.len() {
            let (mut best, mut bd) = (0usize, f64::INFINITY);
            for c in 0..idx.nlist() {
                let d: f64 = pts.row(p).iter().zip(idx.centroid(c)).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
                if d < bd {
                    best = c;
                    bd = d;
                }
            }
            assert_eq!(st.assignments[p] as usize, best);
            assert!((st.distances[p] as f64 - bd).abs() <= 1e-5 * bd.max(1e-6));
        }
        assert!(init_coarse(&pts, 1001, Metric::L2, 0, 4).is_err());
    }

    #[test]
    fn static_single_list_centroid_is_mean() {
        let pts = random_points(100, 4, 5);
        let idx = build_static(&pts, 1, Metric::L2, &KmeansConfig::global(1)).unwrap();
        for j in 0..4 {
            let mean = pts.rows().map(|r| r[j] as f64).sum::<f64>() / 100.0;
            assert!((idx.centroid(0)[j] as f64 - mean).abs() < 1e-5);
        }
    }

    #[test]
    fn full_probe_equals_exact() {
        let pts = random_points(300, 5, 6);
        let q = random_points(10, 5, 7);
        let (idx, _) = init_coarse(&pts, 12, Metric::L2, 0, 1).unwrap();
        let approx = idx.search(&q, 7, 12).unwrap();
        let exact = exact_knn(&pts, &q, 7, Metric::L2).unwrap();
        assert_eq!(approx.topk.ids(), exact.ids());
        assert_eq!(approx.topk.distances(), exact.distances());
        for v in &approx.visited {
            assert_eq!(v.len(), 300);
        }
    }

    #[test]
    fn short_results_are_padded() {
        let pts = VectorSet::from_rows(&[[0.0f32, 0.0], [0.1, 0.0], [10.0, 10.0], [10.1, 10.0]]).unwrap();
        let idx = IvfIndex::from_assignments(&pts, vec![0.0, 0.0, 10.0, 10.0], &[0, 0, 1, 1], Metric::L2);
        let r = idx.search(&VectorSet::from_rows(&[[0.0f32, 0.0]]).unwrap(), 3, 1).unwrap();
        assert_eq!(r.topk.ids_row(0), &[0, 1, -1]);
        assert_eq!(r.topk.distances_row(0)[2], f32::INFINITY);
    }

    #[test]
    fn single_probe_scans_one_list() {
        // Two lists of four points; the query sits in list A.
        let rows: Vec<[f32; 2]> = vec![
            [0.0, 0.0],
            [1.0, 0.0],
            [0.0, 1.0],
            [1.0, 1.0],
            [5.0, 5.0],
            [6.0, 5.0],
            [5.0, 6.0],
            [6.0, 6.0],
        ];
        let pts = VectorSet::from_rows(&rows).unwrap();
        let idx = IvfIndex::from_assignments(&pts, vec![0.5, 0.5, 5.5, 5.5], &[0, 0, 0, 0, 1, 1, 1, 1], Metric::L2);
        let q = VectorSet::from_rows(&[[2.9f32, 2.9]]).unwrap();
        let r = idx.search(&q, 3, 1).unwrap();
        assert_eq!(r.visited_cracks[0], vec![0]);
        // Hand scan of list A: distances 16.82, 11.02, 11.02, 7.22.
        assert_eq!(r.topk.ids_row(0), &[3, 1, 2]);
        let full = exact_knn(&pts, &q, 3, Metric::L2).unwrap();
        assert_ne!(full.ids_row(0), r.topk.ids_row(0));
    }

    #[test]
    fn empty_reorg_is_a_no_op() {
        let pts = random_points(60, 3, 8);
        let (mut idx, _) = init_coarse(&pts, 5, Metric::L2, 0, 9).unwrap();
        let before = idx.to_bytes();
        idx.apply_reorg(&[], &[]).unwrap();
        assert_eq!(idx.to_bytes(), before);
    }

    #[test]
    fn move_to_new_list() {
        let pts = random_points(30, 2, 10);
        let (mut idx, _) = init_coarse(&pts, 2, Metric::L2, 0, 11).unwrap();
        let sizes = idx.list_sizes();
        let id = idx.list(0).ids()[0];
        idx.apply_reorg(&[9.0, 9.0], &[Move { id, from: 0, to: 2 }]).unwrap();
        assert_eq!(idx.list_sizes(), vec![sizes[0] - 1, sizes[1], 1]);
        assert_eq!(idx.list(2).ids(), &[id]);
        assert_eq!(idx.list(2).vectors(), pts.row(id as usize));
    }

    #[test]
    fn reorg_errors_leave_index_untouched() {
        let pts = random_points(30, 2, 12);
        let (mut idx, st) = init_coarse(&pts, 3, Metric::L2, 0, 13).unwrap();
        let before = idx.clone();
        let p = idx.list(0).ids()[0];
        let dup = [Move { id: p, from: 0, to: 1 }, Move { id: p, from: 0, to: 2 }];
        assert!(matches!(idx.apply_reorg(&[], &dup), Err(Error::DuplicateMove { .. })));
        assert!(matches!(
            idx.apply_reorg(&[], &[Move { id: p, from: 0, to: 7 }]),
            Err(Error::ListOutOfRange { list: 7, .. })
        ));
        let wrong = (st.assignments[p as usize] + 1) % 3;
        assert!(matches!(
            idx.apply_reorg(&[0.0, 0.0], &[Move { id: p, from: wrong, to: 3 }]),
            Err(Error::MisplacedPoint { .. })
        ));
        assert_eq!(idx, before);
    }

    #[test]
    fn untouched_lists_keep_order() {
        let pts = random_points(200, 2, 14);
        let (mut idx, _) = init_coarse(&pts, 6, Metric::L2, 0, 15).unwrap();
        let before = idx.clone();
        let moves: Vec<Move> = idx.list(1).ids()[..3].iter().map(|&id| Move { id, from: 1, to: 2 }).collect();
        idx.apply_reorg(&[], &moves).unwrap();
        for c in [0, 3, 4, 5] {
            assert_eq!(idx.list(c), before.list(c));
        }
        assert_eq!(&idx.list(2).ids()[..before.list(2).len()], before.list(2).ids());
    }

    #[test]
    fn snapshot_round_trip_and_corruption() {
        let pts = random_points(80, 3, 16);
        let (idx, _) = init_coarse(&pts, 4, Metric::InnerProduct, 0, 17).unwrap();
        let bytes = idx.to_bytes();
        let back = IvfIndex::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, idx);
        assert!(IvfIndex::read_from(&mut &bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(IvfIndex::read_from(&mut bad.as_slice()).is_err());
    }

    #[test]
    fn empty_index_search_fails() {
        let idx = IvfIndex {
            dim: 2,
            metric: Metric::L2,
            centroids: vec![],
            lists: vec![],
        };
        let q = random_points(1, 2, 0);
        assert!(matches!(idx.search(&q, 1, 1), Err(Error::EmptyIndex)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn random_moves_preserve_coverage(seed in any::<u64>()) {
            let pts = random_points(500, 4, seed);
            let (mut idx, mut st) = init_coarse(&pts, 8, Metric::L2, 0, seed ^ 1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
            let nmoves = rng.random_range(0..200);
            let picked = index::sample(&mut rng, 500, nmoves).into_vec();
            let new_lists = rng.random_range(0..3);
            let moves: Vec<Move> = picked
                .iter()
                .map(|&p| Move { id: p as u32, from: st.assignments[p], to: rng.random_range(0..8 + new_lists) as u32 })
                .collect();
            idx.apply_reorg(&vec![0.0; 4 * new_lists], &moves).unwrap();
            st.histogram.resize(8 + new_lists, 0);
            for m in &moves {
                st.reassign(m.id, m.to, 0.0);
            }
            let owner = idx.assignments_from_lists(500).unwrap();
            prop_assert_eq!(&owner, &st.assignments);
            prop_assert_eq!(idx.list_sizes(), st.histogram.clone());
            prop_assert_eq!(st.histogram.iter().map(|&h| h as usize).sum::<usize>(), 500);
            for (c, l) in idx.lists().iter().enumerate() {
                for (i, &id) in l.ids().iter().enumerate() {
                    prop_assert_eq!(&l.vectors()[i * 4..(i + 1) * 4], pts.row(id as usize));
                    prop_assert_eq!(owner[id as usize] as usize, c);
                }
            }
        }

        #[test]
        fn recall_non_decreasing_in_nprobe(seed in any::<u64>()) {
            let pts = random_points(400, 4, seed);
            let q = random_points(5, 4, seed ^ 9);
            let (idx, _) = init_coarse(&pts, 10, Metric::L2, 0, seed).unwrap();
            let truth = exact_knn(&pts, &q, 5, Metric::L2).unwrap();
            let mut prev = 0.0;
            for nprobe in 1..=10 {
                let r = idx.search_knn(&q, 5, nprobe).unwrap();
                let rec = crate::data::recall_at_k(&r, &truth, 5).unwrap();
                prop_assert!(rec + 1e-12 >= prev);
                prev = rec;
            }
            prop_assert_eq!(prev, 1.0);
        }
    }
}
