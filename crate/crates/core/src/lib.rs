//! Sampling-based motion planning over learned sampling distributions.
//!
//! The crate couples an RRT*-family planner with a conditional normalizing
//! flow trained on expert demonstrations. The flow replaces the uniform
//! proposal distribution of the planner while an epsilon-mixture with uniform
//! sampling keeps probabilistic completeness intact.
//!
//! Module map:
//! - [`env`] — workspace obstacles, procedural environment generation,
//!   collision checking and the point-cloud workspace encoding.
//! - [`mlp`] — minimal dense-network substrate with reverse-mode gradients
//!   and an adaptive-moment optimizer.
//! - [`flow`] — conditional affine-coupling flow: exact densities, sampling,
//!   checkpoint serialization.
//! - [`dataset`] — expert demonstration collection and dataset files.
//! - [`trainer`] — maximum-a-posteriori flow training with validation
//!   tracking and conditioning-mask augmentation.
//! - [`planner`] — samplers (uniform / flow / mixture / informed) and the
//!   RRT* family with per-sample accounting.
//! - [`bench`] — experiment orchestration, aggregation and plot emission.

pub mod bench;
pub mod dataset;
pub mod env;
pub mod error;
pub mod flow;
pub mod mlp;
pub mod planner;
pub mod seed;
pub mod stats;
pub mod trainer;

pub use env::{Config, Environment, Obstacle, RobotKind, WorkspaceEncoding};
pub use error::{Error, Result};
pub use flow::{ConditioningContext, FlowModel};
pub use planner::{PlannerKind, PlannerRun, RunMetrics, Sampler};

/// Bound the global worker pool used by dataset collection, training and
/// benchmark runs. Must be called before any parallel work starts; later
/// calls are ignored by rayon.
pub fn set_worker_threads(jobs: usize) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global();
}
