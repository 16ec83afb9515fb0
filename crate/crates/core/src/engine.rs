//! The self-building index: every search batch is followed by crack
//! buffering and either one CRACK commit or a round of REFINE
//! opportunities, all under a build-time budget.

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::budget::{enough_buffered, BudgetState, ConvergenceMonitor};
use crate::cost_model::{CostModel, KernelInputs};
use crate::data::{KnnResult, Metric, VectorSet};
use crate::distance;
use crate::error::{Error, Result};
use crate::heuristics::{evaluate_crack_candidate, evaluate_refine_candidate, too_dense, too_few_stolen, HeuristicParams, SizeCutoffs};
use crate::ivf::{init_coarse, IvfIndex, Move, SearchResult, VisitedRegion};
use crate::kernels;
use crate::kmeans::{self, KmeansConfig};
use crate::state::{histogram_of, BufferedCrack, CrackBuffer, IndexState};

/// How many lists a query probes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NprobePolicy {
    Fixed(usize),
    /// `ceil(f * nlist)`.
    Fraction(f64),
}

impl NprobePolicy {
    pub fn resolve(&self, nlist: usize) -> usize {
        let n = match *self {
            NprobePolicy::Fixed(n) => n,
            NprobePolicy::Fraction(f) => (f * nlist as f64).ceil() as usize,
        };
        n.clamp(1, nlist.max(1))
    }
}

/// Where the engine's timers come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Monotonic wall-clock durations.
    Wall,
    /// Search costs `seconds_per_distance` per distance evaluated and every
    /// build operation costs exactly its estimate. Makes runs bit-for-bit
    /// reproducible, including every budget decision.
    Modeled { seconds_per_distance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub metric: Metric,
    pub init_nlist: usize,
    /// k-means iterations for the initial representatives; 0 samples them.
    pub init_iters: usize,
    pub nprobe: NprobePolicy,
    pub alpha: f64,
    pub heuristics: HeuristicParams,
    pub kmeans: KmeansConfig,
    /// Apply the crack and refine decision rules. When off, every candidate
    /// that steals at least one point is buffered and every affordable
    /// refine runs.
    pub where_enabled: bool,
    /// Apply the budget, the buffered-crack minimum and convergence. When
    /// off, operations run whenever a candidate exists, until `max_nlist`.
    pub when_enabled: bool,
    pub max_nlist: usize,
    /// Queries per convergence window; `None` disables convergence.
    pub convergence_window: Option<usize>,
    pub clock: ClockMode,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            metric: Metric::L2,
            init_nlist: 100,
            init_iters: 0,
            nprobe: NprobePolicy::Fraction(0.05),
            alpha: 0.5,
            heuristics: HeuristicParams::default(),
            kmeans: KmeansConfig::local(0),
            where_enabled: true,
            when_enabled: true,
            max_nlist: 16_000,
            convergence_window: Some(1000),
            clock: ClockMode::Wall,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.heuristics.validate()?;
        if self.init_nlist == 0 {
            return Err(Error::InvalidParameter("init_nlist must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!("alpha {} not in (0, 1]", self.alpha)));
        }
        if self.max_nlist < self.init_nlist {
            return Err(Error::InvalidParameter("max_nlist below init_nlist".into()));
        }
        match self.nprobe {
            NprobePolicy::Fixed(0) => return Err(Error::InvalidParameter("nprobe must be positive".into())),
            NprobePolicy::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
                return Err(Error::InvalidParameter(format!("nprobe fraction {f} not in (0, 1]")))
            }
            _ => {}
        }
        if self.convergence_window == Some(0) {
            return Err(Error::InvalidParameter("convergence window must be positive".into()));
        }
        if let ClockMode::Modeled { seconds_per_distance } = self.clock {
            if !(seconds_per_distance > 0.0) {
                return Err(Error::InvalidParameter("modeled clock rate must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Crack,
    Refine,
    Converge,
}

/// One build-side event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    /// Queries answered before the batch that triggered the event.
    pub query_index: u64,
    /// New crack ids for a commit, refined crack ids for a refine.
    pub cracks: Vec<u32>,
    pub points_moved: usize,
    pub estimate: f64,
    pub duration: f64,
    pub t_build_before: f64,
    pub t_search_before: f64,
    pub alpha: f64,
    /// The budget inequality was evaluated (and held) before running.
    pub budget_checked: bool,
    /// Buffered cracks discarded during the commit's re-evaluation.
    pub rolled_back: usize,
    pub nlist_after: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineStats {
    pub batches: u64,
    pub queries: u64,
    pub cracks_buffered: u64,
    pub cracks_committed: u64,
    pub cracks_rolled_back: u64,
    pub commits: u64,
    pub refines: u64,
    pub search_distance_computations: u64,
    pub build_distance_computations: u64,
}

/// What the last `search_and_crack` call did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    /// Search time as accounted by the engine's clock.
    pub search_seconds: f64,
    /// Measured search time, whatever the clock mode.
    pub search_wall_seconds: f64,
    pub build_seconds: f64,
    pub buffered: usize,
    pub committed: bool,
    pub refines: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct CrackIvf {
    cfg: EngineConfig,
    points: VectorSet,
    index: IvfIndex,
    true_state: IndexState,
    dyn_state: IndexState,
    buffer: CrackBuffer,
    cost: CostModel,
    budget: BudgetState,
    monitor: ConvergenceMonitor,
    cutoffs: Option<SizeCutoffs>,
    rng: ChaCha8Rng,
    events: Vec<Event>,
    stats: EngineStats,
    last_batch: BatchReport,
    frozen: bool,
    startup_seconds: f64,
}

impl CrackIvf {
    /// Builds the coarse starting index over `points`.
    pub fn new(points: VectorSet, cfg: EngineConfig, cost: CostModel) -> Result<Self> {
        cfg.validate()?;
        cost.ensure_complete()?;
        let start = Instant::now();
        let (index, state) = init_coarse(&points, cfg.init_nlist, cfg.metric, cfg.init_iters, cfg.seed)?;
        let startup_seconds = start.elapsed().as_secs_f64();
        Ok(Self::assemble(points, index, state, cfg, cost, startup_seconds))
    }

    /// Starts from an existing index over `points` instead of a coarse one.
    /// Each point's distance is taken to the representative of the list
    /// holding it, whether or not that representative is its nearest.
    pub fn from_index(points: VectorSet, index: IvfIndex, cfg: EngineConfig, cost: CostModel) -> Result<Self> {
        cfg.validate()?;
        cost.ensure_complete()?;
        if index.dim() != points.dim() {
            return Err(Error::DimensionMismatch {
                expected: points.dim(),
                found: index.dim(),
            });
        }
        let assignments = index.assignments_from_lists(points.len()).map_err(Error::InvalidParameter)?;
        let distances = assignments
            .iter()
            .enumerate()
            .map(|(p, &c)| cfg.metric.distance(points.row(p), index.centroid(c as usize)))
            .collect();
        let state = IndexState::from_assignments(assignments, distances, index.nlist());
        let mut cfg = cfg;
        cfg.init_nlist = index.nlist();
        cfg.max_nlist = cfg.max_nlist.max(index.nlist());
        Ok(Self::assemble(points, index, state, cfg, cost, 0.0))
    }

    fn assemble(points: VectorSet, index: IvfIndex, state: IndexState, cfg: EngineConfig, cost: CostModel, startup_seconds: f64) -> Self {
        Self {
            budget: BudgetState::new(cfg.alpha),
            monitor: ConvergenceMonitor::new(cfg.convergence_window.unwrap_or(1)),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15)),
            dyn_state: state.clone(),
            true_state: state,
            buffer: CrackBuffer::default(),
            cutoffs: None,
            events: Vec::new(),
            stats: EngineStats::default(),
            last_batch: BatchReport::default(),
            frozen: false,
            startup_seconds,
            cost,
            index,
            points,
            cfg,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn index(&self) -> &IvfIndex {
        &self.index
    }

    pub fn points(&self) -> &VectorSet {
        &self.points
    }

    pub fn nlist(&self) -> usize {
        self.index.nlist()
    }

    pub fn nprobe(&self) -> usize {
        self.cfg.nprobe.resolve(self.index.nlist())
    }

    pub fn true_state(&self) -> &IndexState {
        &self.true_state
    }

    pub fn dyn_state(&self) -> &IndexState {
        &self.dyn_state
    }

    pub fn buffer(&self) -> &CrackBuffer {
        &self.buffer
    }

    pub fn budget(&self) -> &BudgetState {
        &self.budget
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn stats(&self) -> &EngineStats {
        &self.stats
    }

    pub fn last_batch(&self) -> &BatchReport {
        &self.last_batch
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Seconds spent building the coarse starting index.
    pub fn startup_seconds(&self) -> f64 {
        self.startup_seconds
    }

    /// Plain search with no side effects.
    pub fn search(&self, queries: &VectorSet, k: usize, nprobe: usize) -> Result<KnnResult> {
        self.index.search_knn(queries, k, nprobe.min(self.index.nlist()))
    }

    /// Answers a batch, then lets the index improve itself.
    ///
    /// The returned neighbors always come from the index as it was when the
    /// batch arrived.
    pub fn search_and_crack(&mut self, queries: &VectorSet, k: usize) -> Result<KnnResult> {
        let nlist = self.index.nlist();
        let nprobe = self.nprobe();
        let start = Instant::now();
        let res = self.index.search(queries, k, nprobe)?;
        let wall = start.elapsed().as_secs_f64();
        let scanned = res.visited.iter().map(|v| v.len() as u64).sum::<u64>() + (queries.len() * nlist) as u64;
        let search_seconds = match self.cfg.clock {
            ClockMode::Wall => wall,
            ClockMode::Modeled { seconds_per_distance } => scanned as f64 * seconds_per_distance,
        };
        self.budget.add_search(search_seconds);
        self.stats.search_distance_computations += scanned;
        let query_index = self.stats.queries;
        self.stats.batches += 1;
        self.stats.queries += queries.len() as u64;

        let build_before = self.budget.t_build;
        let mut report = BatchReport {
            search_seconds,
            search_wall_seconds: wall,
            ..Default::default()
        };
        if !self.frozen {
            self.build_step(queries, &res, query_index, &mut report)?;
            if self.cfg.when_enabled && self.cfg.convergence_window.is_some() {
                let per_query = search_seconds / queries.len().max(1) as f64;
                if self.monitor.end_batch(queries.len(), per_query) {
                    self.converge(query_index);
                    report.converged = true;
                }
            }
        }
        report.build_seconds = self.budget.t_build - build_before;
        self.last_batch = report;
        Ok(res.topk)
    }

    fn build_step(&mut self, queries: &VectorSet, res: &SearchResult, query_index: u64, report: &mut BatchReport) -> Result<()> {
        let nlist = self.index.nlist();
        let params = self.cfg.heuristics;
        for qi in 0..queries.len() {
            if nlist + self.buffer.len() >= self.cfg.max_nlist {
                break;
            }
            let region = &res.visited[qi];
            let local = &res.visited_cracks[qi];
            let cand = evaluate_crack_candidate(self.cfg.metric, region, local, &self.dyn_state, nlist, &params);
            let good = if self.cfg.where_enabled { cand.is_good } else { !cand.steal.is_empty() };
            if good {
                self.buffer_crack(queries.row(qi), region, &cand.steal, local);
                report.buffered += 1;
            }
        }
        self.monitor.record_cracks(report.buffered);

        if !self.buffer.is_empty() {
            let estimate = self.estimate_crack()?;
            let when = self.cfg.when_enabled;
            if !when || (self.budget.can_afford(estimate) && enough_buffered(self.buffer.len(), nlist)) {
                self.run_commit(estimate, when, query_index)?;
                report.committed = true;
                return Ok(());
            }
        }

        for qi in 0..queries.len() {
            let mut signature = res.visited_cracks[qi].clone();
            signature.sort_unstable();
            let estimate = self.estimate_refine(&signature)?;
            if self.cfg.when_enabled && !self.budget.can_afford(estimate) {
                continue;
            }
            if self.cfg.where_enabled && !self.is_refine_candidate(&signature) {
                continue;
            }
            self.run_refine(&signature, estimate, self.cfg.when_enabled, query_index)?;
            self.monitor.record_refine(&signature);
            report.refines += 1;
        }
        Ok(())
    }

    /// Searches one query against the current index and buffers it as a
    /// crack if the decision rules accept it. Returns whether it was buffered.
    pub fn try_buffer(&mut self, query: &[f32]) -> Result<bool> {
        let q = VectorSet::new(query.to_vec(), self.index.dim())?;
        let res = self.index.search(&q, 1, self.nprobe())?;
        let nlist = self.index.nlist();
        let cand = evaluate_crack_candidate(
            self.cfg.metric,
            &res.visited[0],
            &res.visited_cracks[0],
            &self.dyn_state,
            nlist,
            &self.cfg.heuristics,
        );
        let good = if self.cfg.where_enabled { cand.is_good } else { !cand.steal.is_empty() };
        if good {
            self.buffer_crack(query, &res.visited[0], &cand.steal, &res.visited_cracks[0]);
        }
        Ok(good)
    }

    /// Records a crack around `query` in the dynamic state. `steal` holds
    /// positions into `region`.
    pub fn buffer_crack(&mut self, query: &[f32], region: &VisitedRegion, steal: &[usize], local_cracks: &[u32]) {
        let pid = (self.index.nlist() + self.buffer.len()) as u32;
        self.dyn_state.histogram.push(0);
        let mut stolen = Vec::with_capacity(steal.len());
        for &i in steal {
            let p = region.ids[i];
            self.dyn_state.reassign(p, pid, region.distances[i]);
            self.buffer.buffered_points.insert(p);
            stolen.push(p);
        }
        let mut local = local_cracks.to_vec();
        local.sort_unstable();
        self.buffer.cracks.push(BufferedCrack {
            vector: query.to_vec(),
            provisional_id: pid,
            local_cracks: local,
            stolen,
        });
        self.stats.cracks_buffered += 1;
    }

    fn kernel_inputs(&self) -> KernelInputs {
        KernelInputs {
            n_points: self.points.len(),
            nlist: self.index.nlist(),
            dim: self.index.dim(),
            n_iter: self.cfg.kmeans.n_iter,
            ..Default::default()
        }
    }

    pub fn estimate_crack(&self) -> Result<f64> {
        let inputs = KernelInputs {
            nlist: self.index.nlist() + self.buffer.len(),
            buffered: self.buffer.len(),
            local_points: self.buffer.buffered_points.len(),
            ..self.kernel_inputs()
        };
        self.cost.estimate_crack(&inputs)
    }

    pub fn estimate_refine(&self, local: &[u32]) -> Result<f64> {
        let local_points: usize = local.iter().map(|&c| self.true_state.histogram[c as usize] as usize).sum();
        let inputs = KernelInputs {
            local_points,
            local_cracks: local.len(),
            train_points: kmeans::training_size(local_points, local.len(), self.cfg.kmeans.max_points),
            ..self.kernel_inputs()
        };
        self.cost.estimate_refine(&inputs)
    }

    /// The refine decision rules on committed sizes.
    pub fn is_refine_candidate(&mut self, local: &[u32]) -> bool {
        let cutoffs = match self.cutoffs {
            Some(c) => c,
            None => {
                let c = SizeCutoffs::from_histogram(&self.true_state.histogram, self.cfg.heuristics.size_prctl);
                self.cutoffs = Some(c);
                c
            }
        };
        let sizes: Vec<u32> = local.iter().map(|&c| self.true_state.histogram[c as usize]).collect();
        evaluate_refine_candidate(&sizes, cutoffs, &self.cfg.heuristics)
    }

    fn elapsed(&self, start: Instant, estimate: f64) -> f64 {
        match self.cfg.clock {
            ClockMode::Wall => start.elapsed().as_secs_f64(),
            ClockMode::Modeled { .. } => estimate,
        }
    }

    /// Commits the buffer now, bypassing the budget. Returns the number of
    /// cracks that survived re-evaluation.
    pub fn commit_crack(&mut self) -> Result<usize> {
        if self.buffer.is_empty() {
            return Ok(0);
        }
        let estimate = self.estimate_crack()?;
        let before = self.stats.cracks_committed;
        self.run_commit(estimate, false, self.stats.queries)?;
        Ok((self.stats.cracks_committed - before) as usize)
    }

    fn run_commit(&mut self, estimate: f64, budget_checked: bool, query_index: u64) -> Result<()> {
        let start = Instant::now();
        let (t_build_before, t_search_before) = (self.budget.t_build, self.budget.t_search);
        let saved_dyn = self.dyn_state.clone();
        let saved_buffer = self.buffer.clone();
        let outcome = match self.commit_inner() {
            Ok(o) => o,
            Err(e) => {
                self.dyn_state = saved_dyn;
                self.buffer = saved_buffer;
                return Err(e);
            }
        };
        let duration = self.elapsed(start, estimate);
        self.budget.add_build(duration);
        self.monitor.record_commit();
        self.stats.commits += 1;
        self.stats.cracks_committed += outcome.new_cracks.len() as u64;
        self.stats.cracks_rolled_back += outcome.rolled_back as u64;
        self.stats.build_distance_computations += outcome.distance_computations;
        self.events.push(Event {
            kind: EventKind::Crack,
            query_index,
            cracks: outcome.new_cracks,
            points_moved: outcome.moved,
            estimate,
            duration,
            t_build_before,
            t_search_before,
            alpha: self.cfg.alpha,
            budget_checked,
            rolled_back: outcome.rolled_back,
            nlist_after: self.index.nlist(),
        });
        Ok(())
    }

    fn commit_inner(&mut self) -> Result<CommitOutcome> {
        let metric = self.cfg.metric;
        let params = self.cfg.heuristics;
        let spherical = self.cfg.kmeans.spherical;
        let nlist0 = self.index.nlist();
        let dim = self.index.dim();

        // Current members of each buffered crack.
        let mut members: Vec<Vec<u32>> = vec![Vec::new(); self.buffer.len()];
        for &p in &self.buffer.buffered_points {
            let a = self.dyn_state.assignments[p as usize] as usize;
            if a >= nlist0 {
                members[a - nlist0].push(p);
            }
        }

        // Re-evaluate every buffered crack against the committed state: a
        // member only counts if it is still closer to the crack than to its
        // committed representative, then the decision rules run again.
        let mut survivors: Vec<(usize, Vec<u32>)> = Vec::new();
        let mut reverted: Vec<u32> = Vec::new();
        for (i, crack) in self.buffer.cracks.iter().enumerate() {
            let (valid, stale): (Vec<u32>, Vec<u32>) = members[i].iter().partition(|&&p| {
                metric.is_better(self.dyn_state.distances[p as usize], self.true_state.distances[p as usize])
            });
            reverted.extend(stale);
            let keep = if self.cfg.where_enabled {
                let local_points: usize = crack
                    .local_cracks
                    .iter()
                    .map(|&c| self.true_state.histogram[c as usize] as usize)
                    .sum();
                let overlapping = survivors
                    .iter()
                    .filter(|(j, _)| sorted_intersect(&self.buffer.cracks[*j].local_cracks, &crack.local_cracks))
                    .count();
                !too_few_stolen(valid.len(), &params)
                    && !too_dense(local_points, crack.local_cracks.len() + overlapping, &params)
            } else {
                !valid.is_empty()
            };
            if keep {
                survivors.push((i, valid));
            } else {
                reverted.extend(valid);
            }
        }
        let rolled_back = self.buffer.len() - survivors.len();
        for p in reverted {
            let (a, d) = (self.true_state.assignments[p as usize], self.true_state.distances[p as usize]);
            self.dyn_state.reassign(p, a, d);
            self.buffer.buffered_points.remove(&p);
        }

        // Get Local Region: the surviving members' vectors give the new representatives.
        let mut new_centroids = Vec::with_capacity(survivors.len() * dim);
        let mut moves = Vec::new();
        let mut donors: Vec<u32> = Vec::new();
        for (rank, (_, valid)) in survivors.iter().enumerate() {
            let pts = kernels::gather_points(&self.points, valid);
            let mean = kernels::mean_of(pts.rows(), dim, spherical).expect("surviving cracks are non-empty");
            new_centroids.extend_from_slice(&mean);
            let to = (nlist0 + rank) as u32;
            for &p in valid {
                let from = self.true_state.assignments[p as usize];
                donors.push(from);
                moves.push(Move { id: p, from, to });
            }
        }
        donors.sort_unstable();
        donors.dedup();

        kernels::commit_reorg_with_dyn(&mut self.index, &new_centroids, &moves)?;
        kernels::update_centroids(&mut self.index, &donors, spherical);

        // Synchronize: committed state follows the lists, distances follow
        // the recomputed representatives.
        let nlist1 = self.index.nlist();
        self.true_state.histogram.resize(nlist1, 0);
        for m in &moves {
            self.true_state.reassign(m.id, m.to, 0.0);
        }
        let mut affected = donors;
        affected.extend(nlist0 as u32..nlist1 as u32);
        let mut distance_computations = 0u64;
        let mut buf = Vec::new();
        for &c in &affected {
            let list = self.index.list(c as usize);
            buf.clear();
            distance::distances_to_block(metric, self.index.centroid(c as usize), list.vectors(), dim, &mut buf);
            for (&id, &d) in list.ids().iter().zip(&buf) {
                self.true_state.distances[id as usize] = d;
            }
            distance_computations += list.len() as u64;
        }
        self.dyn_state = self.true_state.clone();
        self.buffer.clear();
        self.cutoffs = None;
        Ok(CommitOutcome {
            new_cracks: (nlist0 as u32..nlist1 as u32).collect(),
            moved: moves.len(),
            rolled_back,
            distance_computations,
        })
    }

    /// Refines the region formed by committed cracks `local`, bypassing
    /// the budget and the decision rules. Returns the number of moved points.
    pub fn refine(&mut self, local: &[u32]) -> Result<usize> {
        let mut local = local.to_vec();
        local.sort_unstable();
        local.dedup();
        if let Some(&c) = local.iter().find(|&&c| c as usize >= self.index.nlist()) {
            return Err(Error::ListOutOfRange {
                list: c,
                nlist: self.index.nlist(),
            });
        }
        let estimate = self.estimate_refine(&local)?;
        let before = self.events.len();
        self.run_refine(&local, estimate, false, self.stats.queries)?;
        Ok(self.events[before..].iter().map(|e| e.points_moved).sum())
    }

    fn run_refine(&mut self, local: &[u32], estimate: f64, budget_checked: bool, query_index: u64) -> Result<()> {
        let start = Instant::now();
        let (t_build_before, t_search_before) = (self.budget.t_build, self.budget.t_search);
        let (moved, distance_computations) = self.refine_inner(local)?;
        let duration = self.elapsed(start, estimate);
        self.budget.add_build(duration);
        self.stats.refines += 1;
        self.stats.build_distance_computations += distance_computations;
        self.events.push(Event {
            kind: EventKind::Refine,
            query_index,
            cracks: local.to_vec(),
            points_moved: moved,
            estimate,
            duration,
            t_build_before,
            t_search_before,
            alpha: self.cfg.alpha,
            budget_checked,
            rolled_back: 0,
            nlist_after: self.index.nlist(),
        });
        Ok(())
    }

    fn refine_inner(&mut self, local: &[u32]) -> Result<(usize, u64)> {
        let region = kernels::gather_lists(&self.index, local);
        if region.ids.is_empty() {
            return Ok((0, 0));
        }
        let cfg = KmeansConfig {
            seed: self.rng.next_u64(),
            ..self.cfg.kmeans
        };
        let report = kernels::local_kmeans(&region, &self.index, local, &cfg)?;
        let re = kernels::commit_reorg_without_dyn(&mut self.index, &region, local, &report.centroids, self.cfg.metric)?;
        let nlist = self.index.nlist() as u32;
        for (i, &id) in region.ids.iter().enumerate() {
            let (to, d) = (re.lists[i], re.distances[i]);
            self.true_state.reassign(id, to, d);
            // Points held by a buffered crack keep their provisional entry.
            if self.dyn_state.assignments[id as usize] < nlist {
                self.dyn_state.reassign(id, to, d);
            }
        }
        self.cutoffs = None;
        Ok((re.moved, report.distance_computations + (region.ids.len() * local.len()) as u64))
    }

    /// Stops all build activity and releases the state arrays.
    pub fn freeze(&mut self) {
        self.frozen = true;
        self.true_state.release();
        self.dyn_state.release();
        self.buffer.clear();
        self.cutoffs = None;
    }

    fn converge(&mut self, query_index: u64) {
        self.freeze();
        self.events.push(Event {
            kind: EventKind::Converge,
            query_index,
            cracks: Vec::new(),
            points_moved: 0,
            estimate: 0.0,
            duration: 0.0,
            t_build_before: self.budget.t_build,
            t_search_before: self.budget.t_search,
            alpha: self.cfg.alpha,
            budget_checked: false,
            rolled_back: 0,
            nlist_after: self.index.nlist(),
        });
    }

    /// Verifies coverage and the consistency of both states and the buffer.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let n = self.points.len();
        let owner = self.index.assignments_from_lists(n)?;
        if self.frozen {
            return Ok(());
        }
        let nlist = self.index.nlist();
        let t = &self.true_state;
        let d = &self.dyn_state;
        if t.assignments != owner {
            return Err("committed assignments differ from list membership".into());
        }
        if t.histogram.len() != nlist || t.histogram != histogram_of(&t.assignments, nlist) {
            return Err("committed histogram does not match a recount".into());
        }
        if t.histogram.iter().map(|&h| h as usize).sum::<usize>() != n {
            return Err("committed histogram does not sum to the point count".into());
        }
        let dyn_len = nlist + self.buffer.len();
        if d.histogram.len() != dyn_len || d.histogram != histogram_of(&d.assignments, dyn_len) {
            return Err("dynamic histogram does not match a recount".into());
        }
        for (i, c) in self.buffer.cracks.iter().enumerate() {
            if c.provisional_id as usize != nlist + i {
                return Err(format!("buffered crack {i} has provisional id {}", c.provisional_id));
            }
        }
        for p in 0..n {
            let differs = d.assignments[p] != t.assignments[p];
            if differs != self.buffer.buffered_points.contains(&(p as u32)) {
                return Err(format!("buffered set disagrees with the states at point {p}"));
            }
            if (d.assignments[p] as usize) < nlist && (differs || d.distances[p] != t.distances[p]) {
                return Err(format!("point {p} has a committed dynamic entry that differs from the true one"));
            }
        }
        Ok(())
    }
}

struct CommitOutcome {
    new_cracks: Vec<u32>,
    moved: usize,
    rolled_back: usize,
    distance_computations: u64,
}

fn sorted_intersect(a: &[u32], b: &[u32]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}
