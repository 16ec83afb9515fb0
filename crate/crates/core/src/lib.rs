//! An IVF index that builds itself while answering queries.
//!
//! [`CrackIvf`] starts from a handful of coarse partitions. After each search
//! batch it may carve a new partition around queries that would pull points
//! away from their current representatives (a *crack*), or re-cluster an
//! imbalanced visited region with a local k-means (a *refine*). Both are
//! limited by a budget on the share of total time spent building.

pub mod budget;
pub mod calibration;
pub mod cost_model;
pub mod data;
pub mod distance;
pub mod engine;
pub mod error;
pub mod heuristics;
pub mod io;
pub mod ivf;
pub mod kernels;
pub mod kmeans;
pub mod state;

pub use budget::{can_afford, crack_minimum, enough_buffered, BudgetState, ConvergenceMonitor};
pub use cost_model::{CostModel, Kernel, KernelInputs, KernelModel, KernelSample};
pub use data::{exact_knn, normalize_l2, recall_at_k, KnnResult, Metric, VectorSet, MISSING_ID};
pub use distance::{batch_distances, distance_computations};
pub use engine::{BatchReport, ClockMode, CrackIvf, EngineConfig, EngineStats, Event, EventKind, NprobePolicy};
pub use error::{Error, Result};
pub use heuristics::HeuristicParams;
pub use ivf::{build_static, init_coarse, IvfIndex, Move, SearchResult, VisitedRegion};
pub use kmeans::KmeansConfig;
pub use state::{CrackBuffer, IndexState};
