//! `crackivf` command-line harness.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use crackivf::calibration::{run_microbenchmarks, MicrobenchGrid};
use crackivf::cost_model::fit;
use crackivf::io::{load_bvecs, load_fvecs, load_ivecs, load_raw_f32, save_fvecs, save_ivecs};
use crackivf::{
    exact_knn, normalize_l2, ClockMode, CostModel, EngineConfig, HeuristicParams, IvfIndex, KmeansConfig, KnnResult,
    Metric, NprobePolicy, VectorSet,
};
use crackivf_bench::compare::summarize;
use crackivf_bench::trace::{seconds_per_distance, write_rows};
use crackivf_bench::{
    ablation_variants, compare_baselines, default_nprobes, operating_point, replicate_queries, run_trace,
    skewed_queries, sweep_qps_recall, trace_recall, EngineKind, Mixture, Skew, TraceConfig,
};
use log::{info, warn};

#[derive(Parser)]
#[command(name = "crackivf", version, about = "Adaptive IVF index: trace replay and benchmarks")]
struct Cli {
    /// Worker threads for parallel kernels.
    #[arg(long, global = true, env = "CRACKIVF_WORKERS", default_value_t = 16)]
    workers: usize,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a dataset (or generate a synthetic one) into fvecs.
    Ingest(IngestArgs),
    /// Exact k nearest neighbors of every query, as ivecs.
    GenGroundTruth(GroundTruthArgs),
    /// Time the build kernels on a dataset and fit their cost models.
    FitCostModel(FitArgs),
    /// Replay a query trace against one engine.
    RunTrace(RunTraceArgs),
    /// Recall and throughput of a saved index over a range of nprobe values.
    SweepQpsRecall(SweepArgs),
    /// Cumulative time of several engines on the same trace.
    CompareBaselines(CompareArgs),
    /// The crackivf variants with control mechanisms and rule parameters changed.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    L2,
    Ip,
    /// Inner product over unit-normalized vectors.
    Cosine,
}

impl MetricArg {
    fn metric(self) -> Metric {
        match self {
            MetricArg::L2 => Metric::L2,
            MetricArg::Ip | MetricArg::Cosine => Metric::InnerProduct,
        }
    }

    fn prepare(self, v: VectorSet) -> Result<VectorSet> {
        Ok(if self == MetricArg::Cosine { normalize_l2(&v)? } else { v })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Fvecs,
    Bvecs,
    Raw,
}

#[derive(Clone, Copy, ValueEnum)]
enum SkewArg {
    Uniform,
    Zipf,
    Hotspot,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Bruteforce,
    StaticIvf,
    Crackivf,
}

#[derive(Args)]
struct IngestArgs {
    /// Source file; omit to generate a Gaussian mixture instead.
    #[arg(long, required_unless_present = "synthetic_points")]
    input: Option<PathBuf>,
    /// Defaults to the file extension.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Dimension, for raw float32 input and synthetic data.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    normalize: bool,
    #[arg(long, conflicts_with = "input")]
    synthetic_points: Option<usize>,
    #[arg(long, default_value_t = 100)]
    clusters: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f32,
    /// Also write synthetic queries here.
    #[arg(long, requires = "synthetic_points")]
    queries_out: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    n_queries: usize,
    #[arg(long, value_enum, default_value_t = SkewArg::Hotspot)]
    skew: SkewArg,
    #[arg(long, default_value_t = 1.1)]
    zipf_s: f64,
    #[arg(long, default_value_t = 0.1)]
    hot_fraction: f64,
    #[arg(long, default_value_t = 0.9)]
    hot_mass: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct GroundTruthArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::L2)]
    metric: MetricArg,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::L2)]
    metric: MetricArg,
    #[arg(long)]
    output: PathBuf,
    /// Raw timing samples as CSV.
    #[arg(long)]
    samples_out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct TraceArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MetricArg::L2)]
    metric: MetricArg,
    #[arg(long, default_value_t = 100_000)]
    trace_len: usize,
    /// Replay each query once, in file order, instead of sampling.
    #[arg(long)]
    identity_trace: bool,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Fixed number of lists to probe.
    #[arg(long, conflicts_with = "nprobe_frac")]
    nprobe: Option<usize>,
    /// Fraction of the current lists to probe.
    #[arg(long, default_value_t = 0.05)]
    nprobe_frac: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 100)]
    init_nlist: usize,
    /// k-means iterations for the initial lists; 0 samples representatives.
    #[arg(long, default_value_t = 0)]
    init_iters: usize,
    #[arg(long)]
    min_pts: Option<usize>,
    #[arg(long)]
    pts_crack_thr: Option<f64>,
    #[arg(long)]
    cv_max: Option<f64>,
    #[arg(long)]
    size_prctl: Option<f64>,
    /// Lloyd iterations per refine.
    #[arg(long)]
    refine_iters: Option<usize>,
    #[arg(long, default_value_t = 16_000)]
    max_nlist: usize,
    /// Queries per convergence window; 0 disables convergence.
    #[arg(long, default_value_t = 1000)]
    convergence_window: usize,
    #[arg(long)]
    no_where: bool,
    #[arg(long)]
    no_when: bool,
    /// Charge time from distance counts and cost estimates instead of the
    /// wall clock, which makes every decision reproducible.
    #[arg(long)]
    modeled_clock: bool,
    /// Fitted cost model; calibrated on the base set when omitted.
    #[arg(long)]
    cost_model: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct RunTraceArgs {
    #[command(flatten)]
    trace: TraceArgs,
    #[arg(long, value_enum, default_value_t = EngineArg::Crackivf)]
    engine: EngineArg,
    /// Lists for static-ivf.
    #[arg(long, default_value_t = 1000)]
    nlist: usize,
    #[arg(long, default_value_t = 25)]
    n_iter: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    /// Normalizes queries when cosine.
    #[arg(long, value_enum, default_value_t = MetricArg::L2)]
    metric: MetricArg,
    /// Defaults to powers of two up to nlist.
    #[arg(long, value_delimiter = ',')]
    nprobes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    trace: TraceArgs,
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    static_nlists: Vec<usize>,
    #[arg(long, default_value_t = 25)]
    n_iter: usize,
    #[arg(long)]
    skip_bruteforce: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    trace: TraceArgs,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    ensure!(cli.workers >= 1, "at least one worker");
    rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global()?;
    match &cli.command {
        Command::Ingest(a) => ingest(&cli, a),
        Command::GenGroundTruth(a) => ground_truth(&cli, a),
        Command::FitCostModel(a) => fit_cost_model(&cli, a),
        Command::RunTrace(a) => run_one(&cli, a),
        Command::SweepQpsRecall(a) => sweep(&cli, a),
        Command::CompareBaselines(a) => compare(&cli, a),
        Command::Ablate(a) => ablate(&cli, a),
    }
}

fn load_vectors(path: &Path, format: Option<Format>, dim: Option<usize>) -> Result<VectorSet> {
    let format = match format {
        Some(f) => f,
        None => match path.extension().and_then(|e| e.to_str()) {
            Some("fvecs") => Format::Fvecs,
            Some("bvecs") => Format::Bvecs,
            _ => Format::Raw,
        },
    };
    let v = match format {
        Format::Fvecs => load_fvecs(path),
        Format::Bvecs => load_bvecs(path),
        Format::Raw => load_raw_f32(path, dim.context("raw float32 input needs --dim")?),
    };
    v.with_context(|| format!("loading {}", path.display()))
}

fn load_truth(path: &Path) -> Result<KnnResult> {
    let rows = load_ivecs(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(KnnResult::from_id_rows(&rows)?)
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut p = output.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

fn skew(a: &IngestArgs) -> Skew {
    match a.skew {
        SkewArg::Uniform => Skew::Uniform,
        SkewArg::Zipf => Skew::Zipf { s: a.zipf_s },
        SkewArg::Hotspot => Skew::Hotspot {
            hot_fraction: a.hot_fraction,
            hot_mass: a.hot_mass,
        },
    }
}

fn ingest(cli: &Cli, a: &IngestArgs) -> Result<()> {
    let mut outputs = vec![a.output.display().to_string()];
    let mut v = match (&a.input, a.synthetic_points) {
        (Some(input), _) => load_vectors(input, a.format, a.dim)?,
        (None, Some(n)) => {
            let dim = a.dim.context("synthetic data needs --dim")?;
            let mix = Mixture::new(a.clusters, dim, a.sigma, cli.seed)?;
            if let Some(qpath) = &a.queries_out {
                let mut q = skewed_queries(&mix, a.n_queries, skew(a), cli.seed.wrapping_add(2))?;
                if a.normalize {
                    q = normalize_l2(&q)?;
                }
                save_fvecs(qpath, &q)?;
                outputs.push(qpath.display().to_string());
            }
            mix.points(n, cli.seed.wrapping_add(1))?
        }
        (None, None) => bail!("either --input or --synthetic-points is required"),
    };
    if a.normalize {
        v = normalize_l2(&v)?;
    }
    save_fvecs(&a.output, &v)?;
    info!("wrote {} vectors of dimension {} to {}", v.len(), v.dim(), a.output.display());
    let config = serde_json::json!({
        "input": a.input,
        "synthetic_points": a.synthetic_points,
        "dim": v.dim(),
        "normalize": a.normalize,
        "clusters": a.clusters,
        "sigma": a.sigma,
        "n_queries": a.queries_out.as_ref().map(|_| a.n_queries),
        "skew": a.queries_out.as_ref().map(|_| skew(a)),
    });
    let mut m = crackivf_bench::manifest::Manifest::new("ingest", cli.seed, cli.workers, &config);
    m.outputs = outputs;
    m.write(manifest_path(&a.output))
}

fn ground_truth(cli: &Cli, a: &GroundTruthArgs) -> Result<()> {
    let base = a.metric.prepare(load_vectors(&a.base, None, None)?)?;
    let queries = a.metric.prepare(load_vectors(&a.queries, None, None)?)?;
    let k = a.k.min(base.len());
    let res = exact_knn(&base, &queries, k, a.metric.metric())?;
    let rows: Vec<Vec<i32>> = (0..res.nrows())
        .map(|i| res.ids_row(i).iter().map(|&id| i32::try_from(id)).collect())
        .collect::<Result<_, _>>()
        .context("id does not fit in ivecs")?;
    save_ivecs(&a.output, &rows)?;
    info!("wrote {k} neighbors for {} queries to {}", rows.len(), a.output.display());
    let config = serde_json::json!({ "base": a.base, "queries": a.queries, "k": k, "metric": a.metric.metric() });
    let mut m = crackivf_bench::manifest::Manifest::new("gen-ground-truth", cli.seed, cli.workers, &config);
    m.outputs = vec![a.output.display().to_string()];
    m.write(manifest_path(&a.output))
}

fn calibrate(base: &VectorSet, metric: Metric, seed: u64) -> Result<(CostModel, Vec<crackivf::KernelSample>)> {
    let samples = run_microbenchmarks(base, metric, &MicrobenchGrid::for_dataset(base.len()), seed)?;
    let model = fit(&samples)?;
    for m in model.models() {
        info!("{:<24} r2 {:.3}  n {}", m.kernel.name(), m.r2, m.n);
    }
    Ok((model, samples))
}

fn fit_cost_model(cli: &Cli, a: &FitArgs) -> Result<()> {
    let base = a.metric.prepare(load_vectors(&a.base, None, None)?)?;
    let (model, samples) = calibrate(&base, a.metric.metric(), cli.seed)?;
    model.save(&a.output)?;
    let mut outputs = vec![a.output.display().to_string()];
    if let Some(p) = &a.samples_out {
        write_rows(p, &samples)?;
        outputs.push(p.display().to_string());
    }
    let config = serde_json::json!({ "base": a.base, "metric": a.metric.metric(), "models": model.models().collect::<Vec<_>>() });
    let mut m = crackivf_bench::manifest::Manifest::new("fit-cost-model", cli.seed, cli.workers, &config);
    m.outputs = outputs;
    m.write(manifest_path(&a.output))
}

/// Everything a trace-replaying command needs, loaded once.
struct Prepared {
    cfg: TraceConfig,
    base: VectorSet,
    queries: VectorSet,
    trace: Vec<usize>,
    truth: Option<KnnResult>,
    cost: CostModel,
}

impl TraceArgs {
    fn engine_config(&self, seed: u64) -> EngineConfig {
        let d = HeuristicParams::default();
        let spherical = self.metric == MetricArg::Cosine;
        let mut kmeans = KmeansConfig { spherical, ..KmeansConfig::local(seed) };
        if let Some(n) = self.refine_iters {
            kmeans.n_iter = n;
        }
        EngineConfig {
            metric: self.metric.metric(),
            init_nlist: self.init_nlist,
            init_iters: self.init_iters,
            nprobe: match self.nprobe {
                Some(n) => NprobePolicy::Fixed(n),
                None => NprobePolicy::Fraction(self.nprobe_frac),
            },
            alpha: self.alpha,
            heuristics: HeuristicParams {
                min_pts: self.min_pts.unwrap_or(d.min_pts),
                pts_crack_thr: self.pts_crack_thr.unwrap_or(d.pts_crack_thr),
                cv_max: self.cv_max.unwrap_or(d.cv_max),
                size_prctl: self.size_prctl.unwrap_or(d.size_prctl),
            },
            kmeans,
            where_enabled: !self.no_where,
            when_enabled: !self.no_when,
            max_nlist: self.max_nlist,
            convergence_window: (self.convergence_window > 0).then_some(self.convergence_window),
            clock: ClockMode::Wall,
            seed,
        }
    }

    fn prepare(&self, cli: &Cli) -> Result<Prepared> {
        let mut cfg = TraceConfig {
            base: Some(self.base.clone()),
            queries: Some(self.queries.clone()),
            ground_truth: self.ground_truth.clone(),
            trace_len: self.trace_len,
            batch_size: self.batch_size,
            k: self.k,
            engine: self.engine_config(cli.seed),
            seed: cli.seed,
            workers: cli.workers,
            output_dir: Some(self.output_dir.clone()),
        };
        cfg.validate()?;
        let base = self.metric.prepare(load_vectors(&self.base, None, None)?)?;
        let queries = self.metric.prepare(load_vectors(&self.queries, None, None)?)?;
        ensure!(base.dim() == queries.dim(), "base has dimension {}, queries {}", base.dim(), queries.dim());
        let trace_len = if self.identity_trace { queries.len() } else { self.trace_len };
        cfg.trace_len = trace_len;
        let trace = replicate_queries(queries.len(), trace_len, cli.seed, self.identity_trace)?;
        let truth = self.ground_truth.as_deref().map(load_truth).transpose()?;
        if let Some(t) = &truth {
            ensure!(t.nrows() == queries.len(), "ground truth has {} rows for {} queries", t.nrows(), queries.len());
        }
        let cost = match &self.cost_model {
            Some(p) => CostModel::load(p)?,
            None => {
                warn!("no --cost-model given; calibrating on the base set");
                calibrate(&base, self.metric.metric(), cli.seed)?.0
            }
        };
        if self.modeled_clock {
            let probe = queries.select(&(0..queries.len().min(64)).collect::<Vec<_>>());
            let seconds_per_distance = seconds_per_distance(&base, &probe, 5)?;
            info!("modeled clock: {seconds_per_distance:.3e} s per distance");
            cfg.engine.clock = ClockMode::Modeled { seconds_per_distance };
        }
        std::fs::create_dir_all(&self.output_dir)?;
        Ok(Prepared {
            cfg,
            base,
            queries,
            trace,
            truth,
            cost,
        })
    }
}

fn report_recall(p: &Prepared, m: &crackivf_bench::TraceMetrics) -> Result<Option<f64>> {
    let Some(truth) = &p.truth else { return Ok(None) };
    let n = p.trace.len();
    let tail = n - (n / 10).max(1).min(n);
    let r = trace_recall(m, &p.trace, truth, tail..n)?;
    info!("{}: recall@{} over the last 10% of the trace {r:.4}", m.engine, m.k);
    Ok(Some(r))
}

fn run_one(cli: &Cli, a: &RunTraceArgs) -> Result<()> {
    let p = a.trace.prepare(cli)?;
    let kind = match a.engine {
        EngineArg::Bruteforce => EngineKind::BruteForce,
        EngineArg::StaticIvf => EngineKind::StaticIvf {
            nlist: a.nlist,
            n_iter: a.n_iter,
        },
        EngineArg::Crackivf => EngineKind::CrackIvf,
    };
    let run = run_trace(&p.base, &p.queries, &p.trace, kind, &p.cfg, Some(&p.cost))?;
    let m = &run.metrics;
    info!(
        "{}: startup {:.1} ms, total {:.1} ms, build fraction {:.3}",
        m.engine,
        m.startup_ms(),
        m.total_ms(),
        m.build_fraction()
    );
    if let Some(s) = &m.stats {
        info!("{} commits, {} refines, converged: {}", s.commits, s.refines, run.engine.as_ref().is_some_and(|e| e.is_frozen()));
    }
    let recall = report_recall(&p, m)?;
    let dir = &a.trace.output_dir;
    let mut outputs = vec![dir.join(format!("trace_{}.csv", m.engine)).display().to_string()];
    if !m.events.is_empty() {
        let path = dir.join(format!("events_{}.json", m.engine));
        std::fs::write(&path, serde_json::to_string_pretty(&m.events)?)?;
        outputs.push(path.display().to_string());
    }
    outputs.extend(m.snapshot.iter().map(|s| s.display().to_string()));
    let config = serde_json::json!({ "trace": p.cfg, "engine": kind, "recall_last_10pct": recall });
    let mut man = crackivf_bench::manifest::Manifest::new("run-trace", cli.seed, cli.workers, &config);
    man.outputs = outputs;
    man.write(dir.join(format!("run-trace_{}.json", m.engine)))
}

fn sweep(cli: &Cli, a: &SweepArgs) -> Result<()> {
    let index = IvfIndex::load(&a.index).with_context(|| format!("loading {}", a.index.display()))?;
    let queries = a.metric.prepare(load_vectors(&a.queries, None, None)?)?;
    let truth = load_truth(&a.ground_truth)?;
    let nprobes = if a.nprobes.is_empty() { default_nprobes(index.nlist()) } else { a.nprobes.clone() };
    let rows = sweep_qps_recall(&index, &queries, &truth, &nprobes, a.k, a.reps)?;
    write_rows(&a.output, &rows)?;
    match operating_point(&rows, 0.90, 0.95) {
        Some(r) => info!("operating point: nprobe {} recall {:.4} qps {:.0}", r.nprobe, r.recall, r.qps),
        None => warn!("no nprobe lands recall@{} in [0.90, 0.95]", a.k),
    }
    let config = serde_json::json!({
        "index": a.index, "queries": a.queries, "ground_truth": a.ground_truth,
        "nlist": index.nlist(), "nprobes": nprobes, "k": a.k, "reps": a.reps,
    });
    let mut m = crackivf_bench::manifest::Manifest::new("sweep-qps-recall", cli.seed, cli.workers, &config);
    m.outputs = vec![a.output.display().to_string()];
    m.write(manifest_path(&a.output))
}

fn compare(cli: &Cli, a: &CompareArgs) -> Result<()> {
    let p = a.trace.prepare(cli)?;
    let mut kinds = Vec::new();
    if !a.skip_bruteforce {
        kinds.push(EngineKind::BruteForce);
    }
    kinds.extend(a.static_nlists.iter().map(|&nlist| EngineKind::StaticIvf { nlist, n_iter: a.n_iter }));
    kinds.push(EngineKind::CrackIvf);
    let (runs, aligned) = compare_baselines(&p.base, &p.queries, &p.trace, &kinds, &p.cfg, Some(&p.cost))?;
    let dir = &a.trace.output_dir;
    let path = dir.join("cumulative.csv");
    write_rows(&path, &aligned)?;
    let mut outputs = vec![path.display().to_string()];
    for m in &runs {
        info!("{}: startup {:.1} ms, total {:.1} ms", m.engine, m.startup_ms(), m.total_ms());
        report_recall(&p, m)?;
        outputs.push(dir.join(format!("trace_{}.csv", m.engine)).display().to_string());
    }
    let config = serde_json::json!({ "trace": p.cfg, "engines": kinds });
    let mut man = crackivf_bench::manifest::Manifest::new("compare-baselines", cli.seed, cli.workers, &config);
    man.outputs = outputs;
    man.write(dir.join("compare-baselines.json"))
}

fn ablate(cli: &Cli, a: &AblateArgs) -> Result<()> {
    let p = a.trace.prepare(cli)?;
    let dir = &a.trace.output_dir;
    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    let variants = ablation_variants(&p.cfg);
    for v in &variants {
        let mut cfg = v.cfg.clone();
        cfg.output_dir = Some(dir.join(&v.name));
        let run = run_trace(&p.base, &p.queries, &p.trace, EngineKind::CrackIvf, &cfg, Some(&p.cost))?;
        let row = summarize(&v.name, &run.metrics);
        info!(
            "{}: total {:.1} ms, build fraction {:.3}, nlist {}",
            row.variant, row.total_ms, row.build_fraction, row.final_nlist
        );
        outputs.push(dir.join(&v.name).join("trace_crackivf.csv").display().to_string());
        rows.push(row);
    }
    let path = dir.join("ablation.csv");
    write_rows(&path, &rows)?;
    outputs.insert(0, path.display().to_string());
    let names: Vec<&str> = variants.iter().map(|v| v.name.as_str()).collect();
    let config = serde_json::json!({ "trace": p.cfg, "variants": names });
    let mut man = crackivf_bench::manifest::Manifest::new("ablate", cli.seed, cli.workers, &config);
    man.outputs = outputs;
    man.write(dir.join("ablate.json"))
}
