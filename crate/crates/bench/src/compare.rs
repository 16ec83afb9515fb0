//! Side-by-side cumulative time of several engines, and the ablation runner.

use anyhow::Result;
use crackivf::{CostModel, HeuristicParams, VectorSet};
use serde::Serialize;

use crate::trace::{run_trace, EngineKind, TraceConfig, TraceMetrics};

/// Query counts 1, 10, 100, ... up to `len`, plus `len` itself.
pub fn checkpoints(len: usize) -> Vec<u64> {
    let mut v: Vec<u64> = std::iter::successors(Some(1u64), |&x| Some(x * 10)).take_while(|&x| x < len as u64).collect();
    v.push(len as u64);
    v
}

/// Cumulative milliseconds once at least `q` queries were answered.
pub fn cum_ms_at(m: &TraceMetrics, q: u64) -> Option<f64> {
    m.rows.iter().find(|r| r.query_index >= q && r.event != "startup").map(|r| r.cum_ms)
}

#[derive(Debug, Clone, Serialize)]
pub struct AlignedRow {
    pub engine: String,
    pub queries: u64,
    pub cum_ms: f64,
}

pub fn align(runs: &[TraceMetrics], len: usize) -> Vec<AlignedRow> {
    let mut out = Vec::new();
    for m in runs {
        for q in checkpoints(len) {
            if let Some(cum_ms) = cum_ms_at(m, q) {
                out.push(AlignedRow {
                    engine: m.engine.clone(),
                    queries: q,
                    cum_ms,
                });
            }
        }
    }
    out
}

pub fn compare_baselines(
    base: &VectorSet,
    queries: &VectorSet,
    trace: &[usize],
    kinds: &[EngineKind],
    cfg: &TraceConfig,
    cost: Option<&CostModel>,
) -> Result<(Vec<TraceMetrics>, Vec<AlignedRow>)> {
    let runs = kinds
        .iter()
        .map(|&k| run_trace(base, queries, trace, k, cfg, cost).map(|r| r.metrics))
        .collect::<Result<Vec<_>>>()?;
    let aligned = align(&runs, trace.len());
    Ok((runs, aligned))
}

/// A named variation of the engine configuration.
#[derive(Debug, Clone)]
pub struct Variant {
    pub name: String,
    pub cfg: TraceConfig,
}

/// WHERE and WHEN switched off, three budgets, and one-at-a-time sweeps of
/// each decision-rule parameter around `cfg`.
pub fn ablation_variants(cfg: &TraceConfig) -> Vec<Variant> {
    let mut out = Vec::new();
    let mut push = |name: String, f: &dyn Fn(&mut TraceConfig)| {
        let mut c = cfg.clone();
        f(&mut c);
        out.push(Variant { name, cfg: c });
    };
    push("default".into(), &|_| {});
    push("where-off".into(), &|c| c.engine.where_enabled = false);
    push("when-off".into(), &|c| c.engine.when_enabled = false);
    for a in [0.25, 0.5, 0.75] {
        push(format!("alpha-{a}"), &move |c| c.engine.alpha = a);
    }
    let grid: [(&str, &[f64], fn(&mut HeuristicParams, f64)); 4] = [
        ("min-pts", &[1.0, 2.0, 32.0], |h, v| h.min_pts = v as usize),
        ("pts-crack-thr", &[16.0, 64.0, 128.0], |h, v| h.pts_crack_thr = v),
        ("cv-max", &[1.0, 2.0, 8.0], |h, v| h.cv_max = v),
        ("size-prctl", &[1.0, 10.0, 25.0], |h, v| h.size_prctl = v),
    ];
    for (name, values, set) in grid {
        for &v in values {
            push(format!("{name}-{v}"), &move |c| set(&mut c.engine.heuristics, v));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub total_ms: f64,
    pub build_fraction: f64,
    pub final_nlist: usize,
    pub commits: u64,
    pub refines: u64,
}

pub fn summarize(name: &str, m: &TraceMetrics) -> AblationRow {
    let stats = m.stats.unwrap_or_default();
    AblationRow {
        variant: name.to_string(),
        total_ms: m.total_ms(),
        build_fraction: m.build_fraction(),
        final_nlist: m.rows.last().map_or(0, |r| r.nlist),
        commits: stats.commits,
        refines: stats.refines,
    }
}
