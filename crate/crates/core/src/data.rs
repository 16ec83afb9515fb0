//! Vector storage, metrics, exact search and recall.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance;
use crate::error::{Error, Result};

/// Sentinel id used to pad result rows when fewer than `k` points were scanned.
pub const MISSING_ID: i64 = -1;

/// Similarity metric. L2 is squared Euclidean distance (smaller is nearer);
/// inner product ranks larger values as nearer. Cosine similarity is
/// expressed as inner product over L2-normalized vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    L2,
    InnerProduct,
}

impl Metric {
    #[inline]
    pub fn distance(self, a: &[f32], b: &[f32]) -> f32 {
        match self {
            Metric::L2 => distance::l2_squared(a, b),
            Metric::InnerProduct => distance::inner_product(a, b),
        }
    }

    /// True if `a` is strictly nearer than `b`.
    #[inline]
    pub fn is_better(self, a: f32, b: f32) -> bool {
        match self {
            Metric::L2 => a < b,
            Metric::InnerProduct => a > b,
        }
    }

    /// The value every real distance beats.
    pub fn worst(self) -> f32 {
        match self {
            Metric::L2 => f32::INFINITY,
            Metric::InnerProduct => f32::NEG_INFINITY,
        }
    }

    /// Nearest-first ordering of `(distance, id)` pairs, ties broken by ascending id.
    #[inline]
    pub fn order<I: Ord>(self, a: (f32, I), b: (f32, I)) -> Ordering {
        let by_distance = match self {
            Metric::L2 => a.0.total_cmp(&b.0),
            Metric::InnerProduct => b.0.total_cmp(&a.0),
        };
        by_distance.then_with(|| a.1.cmp(&b.1))
    }

    pub fn code(self) -> u8 {
        match self {
            Metric::L2 => 0,
            Metric::InnerProduct => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Metric::L2),
            1 => Some(Metric::InnerProduct),
            _ => None,
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::L2 => f.write_str("l2"),
            Metric::InnerProduct => f.write_str("ip"),
        }
    }
}

/// Dense row-major matrix of `f32` vectors, all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    data: Vec<f32>,
    dim: usize,
}

impl VectorSet {
    pub fn new(data: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension { record: 0, dim: 0 });
        }
        if data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: data.len() % dim,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self { data, dim })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).ok_or(Error::EmptyDataset)?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(data, dim)
    }

    /// For data copied out of an already validated set.
    pub(crate) fn from_parts(data: Vec<f32>, dim: usize) -> Self {
        debug_assert!(dim > 0 && data.len() % dim == 0);
        Self { data, dim }
    }

    /// An empty set of the given dimension.
    pub fn empty(dim: usize) -> Self {
        Self {
            data: Vec::new(),
            dim: dim.max(1),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.data
    }

    /// Copies the listed rows, in order, into a new set.
    pub fn select(&self, rows: &[usize]) -> VectorSet {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        VectorSet { data, dim: self.dim }
    }
}

/// Scales every row to unit Euclidean norm.
pub fn normalize_l2(v: &VectorSet) -> Result<VectorSet> {
    let mut data = Vec::with_capacity(v.as_slice().len());
    for (i, row) in v.rows().enumerate() {
        let norm = row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm { row: i });
        }
        data.extend(row.iter().map(|&x| (x as f64 / norm) as f32));
    }
    VectorSet::new(data, v.dim())
}

/// Top-k neighbors for a batch of queries. Rows are nearest-first; ties are
/// broken by ascending id; missing entries hold [`MISSING_ID`] and the
/// metric's worst distance.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnResult {
    k: usize,
    distances: Vec<f32>,
    ids: Vec<i64>,
}

impl KnnResult {
    pub fn new(k: usize, distances: Vec<f32>, ids: Vec<i64>) -> Self {
        assert_eq!(distances.len(), ids.len());
        assert!(k > 0 && ids.len() % k == 0, "rows must have exactly k entries");
        Self { k, distances, ids }
    }

    pub(crate) fn from_rows(k: usize, rows: Vec<(Vec<f32>, Vec<i64>)>) -> Self {
        let mut distances = Vec::with_capacity(rows.len() * k);
        let mut ids = Vec::with_capacity(rows.len() * k);
        for (d, i) in rows {
            distances.extend(d);
            ids.extend(i);
        }
        Self { k, distances, ids }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn nrows(&self) -> usize {
        self.ids.len() / self.k
    }

    pub fn ids_row(&self, i: usize) -> &[i64] {
        &self.ids[i * self.k..(i + 1) * self.k]
    }

    pub fn distances_row(&self, i: usize) -> &[f32] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }

    pub fn ids(&self) -> &[i64] {
        &self.ids
    }

    pub fn distances(&self) -> &[f32] {
        &self.distances
    }

    /// Ground truth read from an ivecs file, one row per query.
    pub fn from_id_rows(rows: &[Vec<i32>]) -> Result<Self> {
        let k = rows.first().map(Vec::len).ok_or(Error::EmptyDataset)?;
        if k == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut ids = Vec::with_capacity(rows.len() * k);
        for r in rows {
            if r.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: r.len(),
                });
            }
            ids.extend(r.iter().map(|&x| x as i64));
        }
        let distances = vec![f32::NAN; ids.len()];
        Ok(Self { k, distances, ids })
    }
}

/// Sorts `candidates` nearest-first and returns the first `k`, padded with
/// sentinels when fewer than `k` candidates exist.
pub(crate) fn take_top_k(metric: Metric, candidates: &mut [(f32, i64)], k: usize) -> (Vec<f32>, Vec<i64>) {
    let cmp = |a: &(f32, i64), b: &(f32, i64)| metric.order(*a, *b);
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, cmp);
        candidates[..k].sort_unstable_by(cmp);
    } else {
        candidates.sort_unstable_by(cmp);
    }
    let take = candidates.len().min(k);
    let mut d = Vec::with_capacity(k);
    let mut ids = Vec::with_capacity(k);
    for &(dist, id) in &candidates[..take] {
        d.push(dist);
        ids.push(id);
    }
    d.resize(k, metric.worst());
    ids.resize(k, MISSING_ID);
    (d, ids)
}

/// Brute-force top-k over every base point.
pub fn exact_knn(base: &VectorSet, queries: &VectorSet, k: usize, metric: Metric) -> Result<KnnResult> {
    if base.dim() != queries.dim() {
        return Err(Error::DimensionMismatch {
            expected: base.dim(),
            found: queries.dim(),
        });
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    if k > base.len() {
        return Err(Error::KTooLarge {
            k,
            available: base.len(),
        });
    }
    let rows: Vec<_> = (0..queries.len())
        .into_par_iter()
        .map(|qi| {
            let mut dists = Vec::with_capacity(base.len());
            distance::distances_to_block(metric, queries.row(qi), base.as_slice(), base.dim(), &mut dists);
            let mut cand: Vec<(f32, i64)> = dists.into_iter().enumerate().map(|(i, d)| (d, i as i64)).collect();
            take_top_k(metric, &mut cand, k)
        })
        .collect();
    Ok(KnnResult::from_rows(k, rows))
}

/// Mean fraction of each truth row's first `k` ids found among the result row's first `k`.
pub fn recall_at_k(result: &KnnResult, truth: &KnnResult, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    let available = result.k().min(truth.k());
    if k > available {
        return Err(Error::KTooLarge { k, available });
    }
    if result.nrows() != truth.nrows() {
        return Err(Error::DimensionMismatch {
            expected: truth.nrows(),
            found: result.nrows(),
        });
    }
    if result.nrows() == 0 {
        return Ok(1.0);
    }
    let mut total = 0.0;
    for r in 0..result.nrows() {
        let truth_row = &truth.ids_row(r)[..k];
        let hits = result.ids_row(r)[..k]
            .iter()
            .filter(|&&id| id != MISSING_ID && truth_row.contains(&id))
            .count();
        total += hits as f64 / k as f64;
    }
    Ok(total / result.nrows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[&[f32]]) -> VectorSet {
        VectorSet::from_rows(rows).unwrap()
    }

    #[test]
    fn rejects_non_finite() {
        let err = VectorSet::new(vec![1.0, f32::NAN], 2).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 0, col: 1 }));
    }

    #[test]
    fn normalize_examples() {
        let out = normalize_l2(&set(&[&[3.0, 4.0], &[1.0, 0.0]])).unwrap();
        assert!((out.row(0)[0] - 0.6).abs() < 1e-7);
        assert!((out.row(0)[1] - 0.8).abs() < 1e-7);
        assert_eq!(out.row(1), &[1.0, 0.0]);
    }

    #[test]
    fn normalize_reports_zero_row() {
        let err = normalize_l2(&set(&[&[1.0, 1.0], &[0.0, 0.0]])).unwrap_err();
        assert!(matches!(err, Error::ZeroNorm { row: 1 }));
    }

    #[test]
    fn exact_knn_nearest_by_inspection() {
        let base = set(&[&[0.0, 0.0], &[1.0, 0.0], &[5.0, 5.0]]);
        let q = set(&[&[0.9, 0.0]]);
        let r = exact_knn(&base, &q, 1, Metric::L2).unwrap();
        assert_eq!(r.ids_row(0), &[1]);
        assert!((r.distances_row(0)[0] - 0.01).abs() < 1e-6);

        let q = set(&[&[5.0, 5.0]]);
        let r = exact_knn(&base, &q, 1, Metric::L2).unwrap();
        assert_eq!(r.ids_row(0), &[2]);
        assert_eq!(r.distances_row(0)[0], 0.0);
    }

    #[test]
    fn exact_knn_breaks_ties_by_id() {
        let base = set(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0], &[3.0, 3.0]]);
        let q = set(&[&[0.0, 0.0]]);
        let r = exact_knn(&base, &q, 4, Metric::L2).unwrap();
        assert_eq!(r.ids_row(0), &[0, 1, 2, 3]);
        let r = exact_knn(&base, &q, 3, Metric::InnerProduct).unwrap();
        assert_eq!(r.ids_row(0), &[0, 1, 2]);
    }

    #[test]
    fn exact_knn_errors() {
        let base = set(&[&[0.0, 0.0]]);
        assert!(matches!(
            exact_knn(&base, &set(&[&[0.0, 0.0]]), 2, Metric::L2),
            Err(Error::KTooLarge { .. })
        ));
        assert!(matches!(
            exact_knn(&base, &set(&[&[0.0, 0.0, 0.0]]), 1, Metric::L2),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn recall_examples() {
        let truth = KnnResult::new(3, vec![0.0; 3], vec![1, 2, 3]);
        let same = truth.clone();
        assert_eq!(recall_at_k(&same, &truth, 3).unwrap(), 1.0);
        let partial = KnnResult::new(3, vec![0.0; 3], vec![1, 2, 9]);
        assert!((recall_at_k(&partial, &truth, 3).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let disjoint = KnnResult::new(3, vec![0.0; 3], vec![7, 8, 9]);
        assert_eq!(recall_at_k(&disjoint, &truth, 3).unwrap(), 0.0);
        assert!(matches!(recall_at_k(&same, &truth, 4), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn top_k_pads_with_sentinels() {
        let mut c = vec![(2.0, 5), (1.0, 7)];
        let (d, ids) = take_top_k(Metric::L2, &mut c, 4);
        assert_eq!(ids, vec![7, 5, MISSING_ID, MISSING_ID]);
        assert_eq!(d[2], f32::INFINITY);
        let mut c = vec![(2.0, 5), (1.0, 7)];
        let (d, _) = take_top_k(Metric::InnerProduct, &mut c, 3);
        assert_eq!(d, vec![2.0, 1.0, f32::NEG_INFINITY]);
    }
}
