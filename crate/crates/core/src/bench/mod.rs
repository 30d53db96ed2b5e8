//! Experiment orchestration: planner x sampler grids over held-out
//! environments, per-run metrics capture, aggregation with confidence
//! intervals, and plot emission.
//!
//! Every (environment, pair, repeat) triple is generated once and shared by
//! all planner/sampler cells, so differences between cells come from the
//! sampling distribution alone. Runs execute on the worker pool; per-run
//! seeds are derived, so the outcome is independent of scheduling.

pub mod gallery;
pub mod plots;

pub use gallery::{conditioning_gallery, emit_conditioning_gallery, Gallery, GalleryPanel};
pub use plots::emit_plots;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::env::{edge_valid, encode_workspace, generate_environment, is_valid, Config, Environment, RobotKind};
use crate::error::{Error, Result};
use crate::flow::{ConditioningContext, FlowModel};
use crate::planner::{
    plan, PlannerKind, PlannerRun, RunMetrics, Sampler,
};
use crate::seed;
use crate::stats;

/// Sampling distribution of a benchmark cell. `Flow` is the epsilon-mixture
/// of the learned distribution with uniform draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SamplerKind {
    #[serde(rename = "uniform")]
    Uniform,
    #[serde(rename = "flow")]
    Flow,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Uniform => "uniform",
            SamplerKind::Flow => "flow",
        }
    }
}

/// Benchmark protocol description.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub robot: RobotKind,
    pub n_envs: usize,
    pub pairs_per_env: usize,
    pub repeats: usize,
    pub budget: usize,
    pub planners: Vec<PlannerKind>,
    pub samplers: Vec<SamplerKind>,
    pub epsilon: f64,
    /// Seed stream for endpoint pairs and per-run planner randomness.
    pub seed: u64,
    /// Seed stream for held-out environments. Environment seeds derive under
    /// a bench-specific label, so they are disjoint from every training
    /// environment stream by construction.
    pub env_seed_base: u64,
    pub obs_ratio_range: (f64, f64),
}

impl ExperimentSpec {
    /// Desk-scale evaluation protocol: 10 environments x 3 pairs x 3
    /// repeats at a 10,000-node budget with the epsilon = 0.1 mixture.
    pub fn desk(robot: RobotKind, seed: u64) -> Self {
        ExperimentSpec {
            robot,
            n_envs: 10,
            pairs_per_env: 3,
            repeats: 3,
            budget: 10_000,
            planners: vec![PlannerKind::RrtStar],
            samplers: vec![SamplerKind::Uniform, SamplerKind::Flow],
            epsilon: crate::planner::DEFAULT_EPSILON,
            seed,
            env_seed_base: seed::derive(seed, "bench-env-base"),
            obs_ratio_range: (0.25, 0.55),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.repeats < 1 || self.n_envs < 1 || self.pairs_per_env < 1 {
            return Err(Error::InvalidConfig(
                "environments, pairs and repeats must all be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidConfig("epsilon outside [0,1]".into()));
        }
        if self.planners.is_empty() || self.samplers.is_empty() {
            return Err(Error::InvalidConfig("empty planner or sampler list".into()));
        }
        Ok(())
    }
}

/// One planning problem shared across every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub env_index: usize,
    pub pair_index: usize,
    pub q_init: Config,
    pub q_target: Config,
}

/// Outcome of one planner execution.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub planner: PlannerKind,
    pub sampler: SamplerKind,
    pub env_index: usize,
    pub pair_index: usize,
    pub repeat: usize,
    pub metrics: RunMetrics,
    pub solved: bool,
}

impl RunRecord {
    pub fn file_stem(&self) -> String {
        format!(
            "{}_{}_env{}_pair{}_rep{}",
            self.planner.name(),
            self.sampler.name(),
            self.env_index,
            self.pair_index,
            self.repeat
        )
    }
}

/// Aggregated metrics of one cell at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub planner: PlannerKind,
    pub sampler: SamplerKind,
    pub nodes: u64,
    pub cost_mean: f64,
    pub cost_ci95: f64,
    pub invconn_mean: f64,
    pub invconn_ci95: f64,
    pub invobs_mean: f64,
    pub invobs_ci95: f64,
    pub time_mean: f64,
    pub time_ci95: f64,
    pub samples_total_mean: f64,
    pub samples_total_std: f64,
}

/// Everything produced by one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub robot: RobotKind,
    pub environments: Vec<Environment>,
    pub problems: Vec<Problem>,
    pub runs: Vec<RunRecord>,
    pub aggregate: Vec<AggregateRow>,
}

/// Generate the shared held-out problem set.
pub fn build_problems(spec: &ExperimentSpec) -> Result<(Vec<Environment>, Vec<Problem>)> {
    let (lo, hi) = spec.obs_ratio_range;
    let mut environments = Vec::with_capacity(spec.n_envs);
    for e in 0..spec.n_envs {
        let env_seed = seed::derive_n(spec.env_seed_base, "bench-env", &[e as u64]);
        let mut ratio_rng = seed::rng(seed::derive_n(spec.env_seed_base, "bench-ratio", &[e as u64]));
        let ratio = lo + ratio_rng.gen::<f64>() * (hi - lo);
        environments.push(generate_environment(env_seed, spec.robot, ratio)?);
    }
    let mut problems = Vec::with_capacity(spec.n_envs * spec.pairs_per_env);
    for (e, env) in environments.iter().enumerate() {
        let mut rng = seed::rng(seed::derive_n(spec.seed, "bench-pairs", &[e as u64]));
        let mut taken: Vec<Config> = Vec::new();
        let dim = spec.robot.dim();
        for j in 0..spec.pairs_per_env {
            let mut draw = |taken: &[Config]| -> Result<Config> {
                for _ in 0..10_000 {
                    let q = Config::new((0..dim).map(|_| rng.gen::<f64>()).collect());
                    if is_valid(&q, env)
                        && taken.iter().all(|t| t.dist(&q) >= crate::dataset::ENDPOINT_SEPARATION)
                    {
                        return Ok(q);
                    }
                }
                Err(Error::PathologicalEnvironment {
                    failed: 1,
                    attempted: 1,
                })
            };
            let q_init = draw(&taken)?;
            taken.push(q_init.clone());
            // Prefer wide, straight-line-blocked problems (same policy as
            // dataset collection); fall back to any wide pair.
            let mut q_target = None;
            let mut fallback = None;
            for _ in 0..2000 {
                let q = draw(&taken)?;
                if q.dist(&q_init) < crate::dataset::PAIR_SPAN {
                    continue;
                }
                if !crate::env::edge_valid(&q_init, &q, env) {
                    q_target = Some(q);
                    break;
                }
                if fallback.is_none() {
                    fallback = Some(q);
                }
            }
            let q_target = q_target.or(fallback).ok_or(Error::PathologicalEnvironment {
                failed: 1,
                attempted: 1,
            })?;
            taken.push(q_target.clone());
            problems.push(Problem {
                env_index: e,
                pair_index: j,
                q_init,
                q_target,
            });
        }
    }
    Ok((environments, problems))
}

/// Execute the full grid. `model` is required when any cell samples from the
/// flow; the same problems are used in every cell.
pub fn run_experiment(
    spec: &ExperimentSpec,
    model: Option<&FlowModel>,
) -> Result<ExperimentResult> {
    spec.validate()?;
    if spec.samplers.contains(&SamplerKind::Flow) && model.is_none() {
        return Err(Error::InvalidConfig(
            "flow sampler requested but no checkpoint provided".into(),
        ));
    }
    if let Some(m) = model {
        if m.dim() != spec.robot.dim() {
            return Err(Error::InvalidConfig(format!(
                "checkpoint dimensionality {} does not match robot {}",
                m.dim(),
                spec.robot.name()
            )));
        }
    }
    let (environments, problems) = build_problems(spec)?;
    let encodings: Vec<_> = environments.iter().map(encode_workspace).collect();

    // One descriptor per (cell, problem, repeat); execution order never
    // affects results because every run seed is derived from its indices.
    struct Job {
        planner_idx: usize,
        sampler_idx: usize,
        problem_idx: usize,
        repeat: usize,
    }
    let mut jobs = Vec::new();
    for (pi, _) in spec.planners.iter().enumerate() {
        for (si, _) in spec.samplers.iter().enumerate() {
            for (qi, _) in problems.iter().enumerate() {
                for repeat in 0..spec.repeats {
                    jobs.push(Job {
                        planner_idx: pi,
                        sampler_idx: si,
                        problem_idx: qi,
                        repeat,
                    });
                }
            }
        }
    }

    let runs: Vec<RunRecord> = jobs
        .par_iter()
        .map(|job| {
            let planner = spec.planners[job.planner_idx];
            let sampler_kind = spec.samplers[job.sampler_idx];
            let problem = &problems[job.problem_idx];
            let env = &environments[problem.env_index];
            let run_seed = seed::derive_n(
                spec.seed,
                "bench-run",
                &[
                    job.planner_idx as u64,
                    job.sampler_idx as u64,
                    problem.env_index as u64,
                    problem.pair_index as u64,
                    job.repeat as u64,
                ],
            );
            let run = PlannerRun::new(
                env.clone(),
                problem.q_init.clone(),
                problem.q_target.clone(),
                spec.budget,
                planner,
            );
            let mut sampler = match sampler_kind {
                SamplerKind::Uniform => Sampler::uniform(spec.robot.dim(), run_seed),
                SamplerKind::Flow => {
                    let ctx = ConditioningContext::new(
                        &encodings[problem.env_index],
                        Some(problem.q_init.clone()),
                        Some(problem.q_target.clone()),
                    );
                    Sampler::mixture(model.unwrap(), &ctx, spec.epsilon, run_seed)
                }
            };
            let (trajectory, metrics) = plan(&run, &mut sampler);
            RunRecord {
                planner,
                sampler: sampler_kind,
                env_index: problem.env_index,
                pair_index: problem.pair_index,
                repeat: job.repeat,
                solved: trajectory.is_some(),
                metrics,
            }
        })
        .collect();

    let aggregate = aggregate_runs(&runs, spec);
    Ok(ExperimentResult {
        robot: spec.robot,
        environments,
        problems,
        runs,
        aggregate,
    })
}

/// Aggregate per-run checkpoint series into per-cell means with 95%
/// t-intervals. The interval is computed across per-environment means (the
/// environment is the unit of replication); totals are mean +- standard
/// deviation over all runs of the cell.
pub fn aggregate_runs(runs: &[RunRecord], spec: &ExperimentSpec) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for &planner in &spec.planners {
        for &sampler in &spec.samplers {
            let cell: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.planner == planner && r.sampler == sampler)
                .collect();
            if cell.is_empty() {
                continue;
            }
            let totals: Vec<f64> = cell
                .iter()
                .map(|r| r.metrics.total_samples as f64)
                .collect();
            let samples_total_mean = stats::mean(&totals);
            let samples_total_std = stats::std_dev(&totals);

            let n_checkpoints = cell
                .iter()
                .map(|r| r.metrics.checkpoints.len())
                .max()
                .unwrap_or(0);
            for ci in 0..n_checkpoints {
                let nodes = cell
                    .iter()
                    .find_map(|r| r.metrics.checkpoints.get(ci).map(|c| c.nodes))
                    .unwrap_or(0);
                let pick = |f: &dyn Fn(&crate::planner::CheckpointRow) -> f64| -> Vec<f64> {
                    cell.iter()
                        .filter_map(|r| r.metrics.checkpoints.get(ci).map(|c| f(c)))
                        .collect()
                };
                let costs = pick(&|c| c.best_cost);
                let invconn = pick(&|c| c.invalid_connections as f64);
                let invobs = pick(&|c| c.invalid_obstacles as f64);
                let times = pick(&|c| c.elapsed_seconds);

                let env_means = |values: &[f64]| -> Vec<f64> {
                    let mut per_env: Vec<Vec<f64>> = vec![Vec::new(); spec.n_envs];
                    for (r, v) in cell.iter().zip(values) {
                        per_env[r.env_index].push(*v);
                    }
                    per_env
                        .into_iter()
                        .filter(|v| !v.is_empty())
                        .map(|v| stats::mean(&v))
                        .collect()
                };
                let ci95 = |values: &[f64]| -> f64 {
                    let means = env_means(values);
                    if means.iter().any(|m| !m.is_finite()) {
                        f64::INFINITY
                    } else {
                        stats::ci95_half_width(&means)
                    }
                };
                rows.push(AggregateRow {
                    planner,
                    sampler,
                    nodes,
                    cost_mean: stats::mean(&costs),
                    cost_ci95: ci95(&costs),
                    invconn_mean: stats::mean(&invconn),
                    invconn_ci95: ci95(&invconn),
                    invobs_mean: stats::mean(&invobs),
                    invobs_ci95: ci95(&invobs),
                    time_mean: stats::mean(&times),
                    time_ci95: ci95(&times),
                    samples_total_mean,
                    samples_total_std,
                });
            }
        }
    }
    rows
}

pub const AGGREGATE_CSV_HEADER: &str = "planner,sampler,nodes,cost_mean,cost_ci95,invconn_mean,invconn_ci95,invobs_mean,invobs_ci95,time_mean,time_ci95,samples_total_mean,samples_total_std";

/// Render the aggregate table as CSV (deterministic formatting).
pub fn aggregate_to_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.planner.name(),
            r.sampler.name(),
            r.nodes,
            r.cost_mean,
            r.cost_ci95,
            r.invconn_mean,
            r.invconn_ci95,
            r.invobs_mean,
            r.invobs_ci95,
            r.time_mean,
            r.time_ci95,
            r.samples_total_mean,
            r.samples_total_std
        ));
    }
    out
}

impl ExperimentResult {
    /// Canonical byte serialization of the shared problem list.
    pub fn problems_json(&self) -> String {
        serde_json::to_string(&self.problems).expect("problem serialization cannot fail")
    }

    /// Mean of a per-run summary value over one cell.
    pub fn cell_mean(
        &self,
        planner: PlannerKind,
        sampler: SamplerKind,
        value: impl Fn(&RunRecord) -> Option<f64>,
    ) -> Option<f64> {
        let vs: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.planner == planner && r.sampler == sampler)
            .filter_map(&value)
            .collect();
        if vs.is_empty() {
            None
        } else {
            Some(stats::mean(&vs))
        }
    }

    /// Write per-run CSVs, the aggregate CSV and the problem list.
    pub fn write_to(&self, out_dir: &Path) -> Result<()> {
        let runs_dir = out_dir.join("runs");
        std::fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
        for run in &self.runs {
            let path = runs_dir.join(format!("{}.csv", run.file_stem()));
            run.metrics.write_csv(&path)?;
        }
        let agg_path = out_dir.join("aggregate.csv");
        std::fs::write(&agg_path, aggregate_to_csv(&self.aggregate))
            .map_err(|e| Error::io(&agg_path, e))?;
        let problems_path = out_dir.join("problems.json");
        std::fs::write(&problems_path, self.problems_json())
            .map_err(|e| Error::io(&problems_path, e))?;
        Ok(())
    }
}
