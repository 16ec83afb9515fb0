//! When build operations may run: the time budget, the buffered-crack
//! minimum, and convergence detection.

use std::collections::HashSet;

/// `t_build + estimate <= alpha * (t_build + t_search + estimate)`.
pub fn can_afford(t_build: f64, t_search: f64, estimate: f64, alpha: f64) -> bool {
    t_build + estimate <= alpha * (t_build + t_search + estimate)
}

/// `ceil(0.2 * nlist)`.
pub fn crack_minimum(nlist: usize) -> usize {
    nlist.div_ceil(5)
}

pub fn enough_buffered(buffered: usize, nlist: usize) -> bool {
    buffered > crack_minimum(nlist)
}

/// Cumulative build and search time, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetState {
    pub t_build: f64,
    pub t_search: f64,
    pub alpha: f64,
}

impl BudgetState {
    pub fn new(alpha: f64) -> Self {
        Self {
            t_build: 0.0,
            t_search: 0.0,
            alpha,
        }
    }

    pub fn can_afford(&self, estimate: f64) -> bool {
        can_afford(self.t_build, self.t_search, estimate, self.alpha)
    }

    pub fn add_build(&mut self, seconds: f64) {
        self.t_build += seconds.max(0.0);
    }

    pub fn add_search(&mut self, seconds: f64) {
        self.t_search += seconds.max(0.0);
    }

    pub fn build_fraction(&self) -> f64 {
        let total = self.t_build + self.t_search;
        if total > 0.0 {
            self.t_build / total
        } else {
            0.0
        }
    }
}

/// Watches fixed windows of queries and reports when build activity has
/// stopped paying off.
///
/// A window is converged when it saw no buffered cracks, every refine in it
/// hit a region whose cracks were all refined since the last commit, and the
/// median relative search-latency improvement following those refines is
/// under `min_improvement`.
#[derive(Debug, Clone)]
pub struct ConvergenceMonitor {
    window: usize,
    min_improvement: f64,
    queries_in_window: usize,
    cracks_in_window: usize,
    novel_refine: bool,
    /// Crack ids refined since the last commit.
    refined: HashSet<u32>,
    improvements: Vec<f64>,
    refined_this_batch: bool,
    awaiting: Option<f64>,
    windows_seen: usize,
}

impl ConvergenceMonitor {
    pub fn new(window: usize) -> Self {
        assert!(window >= 1, "convergence window must be positive");
        Self {
            window,
            min_improvement: 0.01,
            queries_in_window: 0,
            cracks_in_window: 0,
            novel_refine: false,
            refined: HashSet::new(),
            improvements: Vec::new(),
            refined_this_batch: false,
            awaiting: None,
            windows_seen: 0,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn windows_seen(&self) -> usize {
        self.windows_seen
    }

    pub fn record_cracks(&mut self, n: usize) {
        self.cracks_in_window += n;
    }

    /// Called when new cracks are committed: earlier refines no longer
    /// describe the current partitioning.
    pub fn record_commit(&mut self) {
        self.refined.clear();
    }

    /// `signature` is the set of refined crack ids. A region counts as
    /// already refined when every one of its cracks was refined since the
    /// last commit, even if as part of other regions.
    pub fn record_refine(&mut self, signature: &[u32]) {
        if !signature.iter().all(|c| self.refined.contains(c)) {
            self.novel_refine = true;
        }
        self.refined.extend(signature.iter().copied());
        self.refined_this_batch = true;
    }

    /// Closes a batch with its per-query search latency. A refine's effect
    /// is measured as the change from the batch it ran in to the next one.
    /// Returns true when this batch completed a converged window.
    pub fn end_batch(&mut self, queries: usize, latency_per_query: f64) -> bool {
        if let Some(before) = self.awaiting.take() {
            let gain = if before > 0.0 { (before - latency_per_query) / before } else { 0.0 };
            self.improvements.push(gain);
        }
        if self.refined_this_batch {
            self.awaiting = Some(latency_per_query);
            self.refined_this_batch = false;
        }
        self.queries_in_window += queries;
        if self.queries_in_window < self.window {
            return false;
        }
        let converged = self.check_converged();
        self.windows_seen += 1;
        self.queries_in_window = 0;
        self.cracks_in_window = 0;
        self.novel_refine = false;
        self.improvements.clear();
        converged
    }

    /// Evaluates the current (possibly partial) window.
    pub fn check_converged(&self) -> bool {
        self.cracks_in_window == 0 && !self.novel_refine && median(&self.improvements).is_none_or(|m| m < self.min_improvement)
    }
}

fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}
