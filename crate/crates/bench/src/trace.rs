//! Replaying a query trace against one engine and recording its cost over time.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use crackivf::{
    build_static, distance_computations, exact_knn, recall_at_k, CostModel, CrackIvf, EngineConfig, EngineStats, Event,
    EventKind, IvfIndex, KmeansConfig, KnnResult, VectorSet,
};
use serde::{Deserialize, Serialize};

/// Everything needed to replay one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub base: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub trace_len: usize,
    pub batch_size: usize,
    pub k: usize,
    /// Engine parameters; its metric and nprobe policy apply to every engine.
    pub engine: EngineConfig,
    pub seed: u64,
    pub workers: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            base: None,
            queries: None,
            ground_truth: None,
            trace_len: 100_000,
            batch_size: 16,
            k: 10,
            engine: EngineConfig::default(),
            seed: 0,
            workers: 16,
            output_dir: None,
        }
    }
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.trace_len >= 1, "trace length must be at least 1");
        ensure!(self.batch_size >= 1, "batch size must be at least 1");
        ensure!(self.k >= 1, "k must be at least 1");
        for p in [&self.base, &self.queries, &self.ground_truth].into_iter().flatten() {
            ensure!(p.exists(), "{} does not exist", p.display());
        }
        self.engine.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum EngineKind {
    BruteForce,
    StaticIvf { nlist: usize, n_iter: usize },
    CrackIvf,
}

impl EngineKind {
    pub fn label(&self) -> String {
        match self {
            EngineKind::BruteForce => "bruteforce".into(),
            EngineKind::StaticIvf { nlist, .. } => format!("static-ivf-{nlist}"),
            EngineKind::CrackIvf => "crackivf".into(),
        }
    }
}

/// One CSV row. The first row of every trace (`event = "startup"`) carries
/// the time spent before the first query could be answered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Queries answered once this row's batch is done.
    pub query_index: u64,
    pub batch_ms: f64,
    pub cum_ms: f64,
    pub cum_build_ms: f64,
    pub cum_search_ms: f64,
    pub cum_build_distcomps: u64,
    pub nlist: usize,
    pub event: String,
}

#[derive(Debug, Clone)]
pub struct TraceMetrics {
    pub engine: String,
    pub k: usize,
    pub rows: Vec<TraceRow>,
    /// Returned ids, `k` per trace position.
    pub result_ids: Vec<i64>,
    /// Measured search milliseconds per batch, even when the engine runs on
    /// a modeled clock.
    pub search_wall_ms: Vec<f64>,
    pub events: Vec<Event>,
    pub stats: Option<EngineStats>,
    pub snapshot: Option<PathBuf>,
}

impl TraceMetrics {
    pub fn startup_ms(&self) -> f64 {
        self.rows.first().map_or(0.0, |r| r.batch_ms)
    }

    /// Batch rows, without the startup row.
    pub fn batches(&self) -> &[TraceRow] {
        &self.rows[1..]
    }

    pub fn total_ms(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cum_ms)
    }

    pub fn build_fraction(&self) -> f64 {
        let last = self.rows.last().expect("startup row");
        let total = last.cum_build_ms + last.cum_search_ms;
        if total > 0.0 {
            last.cum_build_ms / total
        } else {
            0.0
        }
    }

    /// Returned ids of the queries at trace positions `range`, as a result set.
    pub fn results(&self, range: std::ops::Range<usize>) -> KnnResult {
        let ids = self.result_ids[range.start * self.k..range.end * self.k].to_vec();
        let distances = vec![0.0; ids.len()];
        KnnResult::new(self.k, distances, ids)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_rows(path, &self.rows)
    }
}

pub fn write_rows<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Recall of the logged results against per-unique-query ground truth.
pub fn trace_recall(metrics: &TraceMetrics, trace: &[usize], truth: &KnnResult, range: std::ops::Range<usize>) -> Result<f64> {
    let k = metrics.k;
    let mut ids = Vec::with_capacity(range.len() * truth.k());
    for &q in &trace[range.clone()] {
        ids.extend_from_slice(truth.ids_row(q));
    }
    let aligned = KnnResult::new(truth.k(), vec![0.0; ids.len()], ids);
    Ok(recall_at_k(&metrics.results(range), &aligned, k)?)
}

struct Recorder {
    rows: Vec<TraceRow>,
    build_ms: f64,
    search_ms: f64,
}

impl Recorder {
    fn new(startup_ms: f64, distcomps: u64, nlist: usize) -> Self {
        let row = TraceRow {
            query_index: 0,
            batch_ms: startup_ms,
            cum_ms: startup_ms,
            cum_build_ms: startup_ms,
            cum_search_ms: 0.0,
            cum_build_distcomps: distcomps,
            nlist,
            event: "startup".into(),
        };
        Self {
            rows: vec![row],
            build_ms: startup_ms,
            search_ms: 0.0,
        }
    }

    fn push(&mut self, answered: u64, search_ms: f64, build_ms: f64, build_distcomps: u64, nlist: usize, event: String) {
        self.search_ms += search_ms;
        self.build_ms += build_ms;
        let prev = self.rows.last().map_or(0, |r| r.cum_build_distcomps);
        self.rows.push(TraceRow {
            query_index: answered,
            batch_ms: search_ms + build_ms,
            cum_ms: self.build_ms + self.search_ms,
            cum_build_ms: self.build_ms,
            cum_search_ms: self.search_ms,
            cum_build_distcomps: prev.max(build_distcomps),
            nlist,
            event,
        });
    }
}

fn event_label(events: &[Event]) -> String {
    let mut parts: Vec<&str> = events
        .iter()
        .map(|e| match e.kind {
            EventKind::Crack => "crack",
            EventKind::Refine => "refine",
            EventKind::Converge => "converge",
        })
        .collect();
    parts.dedup();
    parts.join("+")
}

/// Measured seconds per distance evaluation for brute-force scans of
/// `base`, the median of `reps` timed runs. Feeds the modeled clock.
pub fn seconds_per_distance(base: &VectorSet, queries: &VectorSet, reps: usize) -> Result<f64> {
    ensure!(!base.is_empty() && !queries.is_empty() && reps >= 1, "nothing to time");
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            crackivf::batch_distances(crackivf::Metric::L2, queries, base).map(|_| t.elapsed().as_secs_f64())
        })
        .collect::<crackivf::Result<_>>()?;
    times.sort_by(f64::total_cmp);
    Ok(times[reps / 2] / (base.len() * queries.len()) as f64)
}

/// What a run leaves behind besides its metrics.
pub struct TraceRun {
    pub metrics: TraceMetrics,
    pub index: Option<IvfIndex>,
    pub engine: Option<CrackIvf>,
}

/// Replays `trace` (row indices into `queries`) in batches against `kind`.
pub fn run_trace(
    base: &VectorSet,
    queries: &VectorSet,
    trace: &[usize],
    kind: EngineKind,
    cfg: &TraceConfig,
    cost: Option<&CostModel>,
) -> Result<TraceRun> {
    ensure!(cfg.batch_size >= 1 && cfg.k >= 1, "batch size and k must be positive");
    ensure!(!trace.is_empty(), "empty trace");
    ensure!(base.dim() == queries.dim(), "base and query dimensions differ");
    ensure!(trace.iter().all(|&q| q < queries.len()), "trace refers to a missing query");
    let metric = cfg.engine.metric;
    let k = cfg.k;
    let mut result_ids = Vec::with_capacity(trace.len() * k);
    let mut search_wall_ms = Vec::with_capacity(trace.len().div_ceil(cfg.batch_size));
    let batches = trace.chunks(cfg.batch_size);

    let (rows, events, stats, index, engine) = match kind {
        EngineKind::BruteForce => {
            let mut rec = Recorder::new(0.0, 0, 0);
            let mut answered = 0;
            for chunk in batches {
                let q = queries.select(chunk);
                let t = Instant::now();
                let res = exact_knn(base, &q, k, metric)?;
                let ms = t.elapsed().as_secs_f64() * 1e3;
                answered += chunk.len() as u64;
                result_ids.extend_from_slice(res.ids());
                search_wall_ms.push(ms);
                rec.push(answered, ms, 0.0, 0, 0, String::new());
            }
            (rec.rows, Vec::new(), None, None, None)
        }
        EngineKind::StaticIvf { nlist, n_iter } => {
            let kcfg = KmeansConfig {
                n_iter,
                seed: cfg.seed,
                spherical: cfg.engine.kmeans.spherical,
                ..KmeansConfig::global(cfg.seed)
            };
            let c0 = distance_computations();
            let t = Instant::now();
            let idx = build_static(base, nlist, metric, &kcfg)?;
            let startup = t.elapsed().as_secs_f64() * 1e3;
            let mut rec = Recorder::new(startup, distance_computations() - c0, idx.nlist());
            let nprobe = cfg.engine.nprobe.resolve(idx.nlist());
            let mut answered = 0;
            for chunk in batches {
                let q = queries.select(chunk);
                let t = Instant::now();
                let res = idx.search_knn(&q, k, nprobe)?;
                let ms = t.elapsed().as_secs_f64() * 1e3;
                answered += chunk.len() as u64;
                result_ids.extend_from_slice(res.ids());
                search_wall_ms.push(ms);
                rec.push(answered, ms, 0.0, 0, idx.nlist(), String::new());
            }
            (rec.rows, Vec::new(), None, Some(idx), None)
        }
        EngineKind::CrackIvf => {
            let cost = cost.context("crackivf needs a cost model")?.clone();
            let c0 = distance_computations();
            let mut e = CrackIvf::new(base.clone(), cfg.engine.clone(), cost)?;
            let init_distcomps = distance_computations() - c0;
            let mut rec = Recorder::new(e.startup_seconds() * 1e3, init_distcomps, e.nlist());
            let mut answered = 0;
            for chunk in batches {
                let q = queries.select(chunk);
                let seen = e.events().len();
                let res = e.search_and_crack(&q, k)?;
                answered += chunk.len() as u64;
                result_ids.extend_from_slice(res.ids());
                let b = *e.last_batch();
                search_wall_ms.push(b.search_wall_seconds * 1e3);
                rec.push(
                    answered,
                    b.search_seconds * 1e3,
                    b.build_seconds * 1e3,
                    init_distcomps + e.stats().build_distance_computations,
                    e.nlist(),
                    event_label(&e.events()[seen..]),
                );
            }
            let events = e.events().to_vec();
            let stats = *e.stats();
            (rec.rows, events, Some(stats), Some(e.index().clone()), Some(e))
        }
    };

    let mut metrics = TraceMetrics {
        engine: kind.label(),
        k,
        rows,
        result_ids,
        search_wall_ms,
        events,
        stats,
        snapshot: None,
    };
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir)?;
        metrics.write_csv(dir.join(format!("trace_{}.csv", metrics.engine)))?;
        if let Some(idx) = &index {
            let path = dir.join(format!("index_{}.civf", metrics.engine));
            idx.save(&path)?;
            metrics.snapshot = Some(path);
        }
    }
    Ok(TraceRun { metrics, index, engine })
}
