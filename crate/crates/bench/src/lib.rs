//! Benchmark harness for `crackivf`: synthetic workloads, trace replay,
//! recall/throughput sweeps and engine comparisons.

pub mod compare;
pub mod manifest;
pub mod sweep;
pub mod trace;
pub mod workload;

pub use compare::{ablation_variants, align, compare_baselines, AblationRow, AlignedRow, Variant};
pub use sweep::{default_nprobes, operating_point, qps_at_recall, sweep_qps_recall, SweepRow};
pub use trace::{run_trace, trace_recall, EngineKind, TraceConfig, TraceMetrics, TraceRow, TraceRun};
pub use workload::{replicate_queries, skewed_queries, Mixture, Skew};
