//! Samplers and the RRT* planner family with per-sample accounting.
//!
//! Every sampler draw ends in exactly one of three outcomes — rejected in
//! collision, rejected for a blocked connection, or accepted as a tree node —
//! so `invalid_obstacles + invalid_connections + nodes_added` always equals
//! the number of configurations that reached a collision check. Informed
//! rejections happen before any collision check and are counted separately.

mod kdtree;
mod sampler;

pub use kdtree::KdTree;
pub use sampler::{
    FlowSampler, InformedSet, MixtureSampler, Sampler, UniformSampler, DEFAULT_EPSILON,
    FLOW_BATCH_SIZE,
};

use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

use crate::env::{edge_valid, is_valid, Config, Environment};
use crate::error::{Error, Result};

/// RRT* variants covered by the benchmark protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlannerKind {
    #[serde(rename = "rrt-star")]
    RrtStar,
    #[serde(rename = "bi-rrt-star")]
    BiRrtStar,
    #[serde(rename = "informed-rrt-star")]
    InformedRrtStar,
}

impl PlannerKind {
    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::RrtStar => "rrt-star",
            PlannerKind::BiRrtStar => "bi-rrt-star",
            PlannerKind::InformedRrtStar => "informed-rrt-star",
        }
    }
}

/// Extension and rewiring constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerParams {
    /// Maximum extension step and goal-region radius.
    pub eta: f64,
    /// Rewiring radius scale: r_n = min(gamma (ln n / n)^(1/d), eta).
    pub gamma: f64,
    /// Metrics checkpoint spacing in accepted nodes.
    pub checkpoint_interval: usize,
    /// While unsolved, every this many extension attempts steers straight at
    /// the goal instead of a sampler draw. The eta-ball goal region is
    /// vanishingly small in four dimensions; without these directed
    /// extensions the expert cannot finish 4-dof problems at desk budgets.
    pub goal_attempt_interval: usize,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            eta: 0.05,
            gamma: 3.0,
            checkpoint_interval: 100,
            goal_attempt_interval: 50,
        }
    }
}

/// One planning problem plus its execution policy.
#[derive(Debug, Clone)]
pub struct PlannerRun {
    pub env: Environment,
    pub q_init: Config,
    pub q_target: Config,
    pub budget: usize,
    pub planner: PlannerKind,
    pub params: PlannerParams,
    /// Stop as soon as any solution exists (completeness experiments).
    pub stop_on_first_solution: bool,
}

impl PlannerRun {
    pub fn new(
        env: Environment,
        q_init: Config,
        q_target: Config,
        budget: usize,
        planner: PlannerKind,
    ) -> Self {
        PlannerRun {
            env,
            q_init,
            q_target,
            budget,
            planner,
            params: PlannerParams::default(),
            stop_on_first_solution: false,
        }
    }
}

/// A collision-free path through C-space, endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub waypoints: Vec<Config>,
    pub cost: f64,
}

/// Full validation of a reported trajectory: endpoint equality, per-segment
/// collision checks and cost consistency.
pub fn validate_trajectory(
    traj: &Trajectory,
    env: &Environment,
    q_init: &Config,
    q_target: &Config,
) -> bool {
    if traj.waypoints.len() < 2 {
        return false;
    }
    if traj.waypoints.first() != Some(q_init) || traj.waypoints.last() != Some(q_target) {
        return false;
    }
    let mut length = 0.0;
    for pair in traj.waypoints.windows(2) {
        if !edge_valid(&pair[0], &pair[1], env) {
            return false;
        }
        length += pair[0].dist(&pair[1]);
    }
    (length - traj.cost).abs() <= 1e-9
}

/// One metrics checkpoint; `best_cost` is infinite before the first solution.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRow {
    pub nodes: u64,
    pub best_cost: f64,
    pub invalid_connections: u64,
    pub invalid_obstacles: u64,
    pub total_samples: u64,
    pub elapsed_seconds: f64,
}

/// Accounting of one planner run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub checkpoints: Vec<CheckpointRow>,
    pub nodes_added: u64,
    pub invalid_obstacles: u64,
    pub invalid_connections: u64,
    pub total_samples: u64,
    pub informed_rejections: u64,
    pub first_solution_cost: Option<f64>,
    pub first_solution_nodes: Option<u64>,
    pub best_cost: f64,
    pub elapsed_seconds: f64,
}

pub const METRICS_CSV_HEADER: &str =
    "nodes,best_cost,invalid_connections,invalid_obstacles,total_samples,elapsed_seconds";

impl RunMetrics {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_CSV_HEADER);
        out.push('\n');
        for row in &self.checkpoints {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.nodes,
                row.best_cost,
                row.invalid_connections,
                row.invalid_obstacles,
                row.total_samples,
                row.elapsed_seconds
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn parse_csv(text: &str) -> Result<Vec<CheckpointRow>> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::InvalidConfig(format!(
                    "metrics line {} has {} fields",
                    lineno + 1,
                    fields.len()
                )));
            }
            let parse_f = |s: &str| s.parse::<f64>().map_err(|e| {
                Error::InvalidConfig(format!("metrics line {}: {e}", lineno + 1))
            });
            let parse_u = |s: &str| s.parse::<u64>().map_err(|e| {
                Error::InvalidConfig(format!("metrics line {}: {e}", lineno + 1))
            });
            rows.push(CheckpointRow {
                nodes: parse_u(fields[0])?,
                best_cost: parse_f(fields[1])?,
                invalid_connections: parse_u(fields[2])?,
                invalid_obstacles: parse_u(fields[3])?,
                total_samples: parse_u(fields[4])?,
                elapsed_seconds: parse_f(fields[5])?,
            });
        }
        Ok(rows)
    }
}

/// Planner roadmap: a cost-annotated forest with a spatial index.
#[derive(Debug, Clone)]
pub struct RoadmapTree {
    configs: Vec<Config>,
    parents: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    costs: Vec<f64>,
    kd: KdTree,
}

impl RoadmapTree {
    pub fn new(root: Config) -> Self {
        let mut kd = KdTree::new(root.dim());
        kd.insert(root.coords());
        RoadmapTree {
            configs: vec![root],
            parents: vec![None],
            children: vec![Vec::new()],
            costs: vec![0.0],
            kd,
        }
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        false // a tree always has its root
    }

    pub fn config(&self, i: usize) -> &Config {
        &self.configs[i]
    }

    pub fn cost(&self, i: usize) -> f64 {
        self.costs[i]
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parents[i]
    }

    /// Index of the closest node; ties resolve to the lowest index.
    pub fn nearest(&self, q: &Config) -> usize {
        self.kd.nearest(q.coords())
    }

    /// Indices within `radius`, ascending.
    pub fn near(&self, q: &Config, radius: f64) -> Vec<usize> {
        self.kd.within_radius(q.coords(), radius)
    }

    pub fn insert(&mut self, q: Config, parent: usize) -> usize {
        let cost = self.costs[parent] + self.configs[parent].dist(&q);
        let id = self.configs.len();
        self.kd.insert(q.coords());
        self.configs.push(q);
        self.parents.push(Some(parent));
        self.children.push(Vec::new());
        self.costs.push(cost);
        self.children[parent].push(id);
        id
    }

    /// Reparent `node` under `new_parent` and recompute costs across the
    /// moved subtree from scratch (cost(child) = cost(parent) + edge length).
    pub fn rewire(&mut self, node: usize, new_parent: usize) {
        let old_parent = self.parents[node].expect("cannot rewire the root");
        let pos = self.children[old_parent]
            .iter()
            .position(|c| *c == node)
            .expect("child list out of sync");
        self.children[old_parent].swap_remove(pos);
        self.parents[node] = Some(new_parent);
        self.children[new_parent].push(node);
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            let p = self.parents[n].unwrap();
            self.costs[n] = self.costs[p] + self.configs[p].dist(&self.configs[n]);
            stack.extend_from_slice(&self.children[n]);
        }
    }

    /// Node indices from the root to `i`, inclusive.
    pub fn path_from_root(&self, i: usize) -> Vec<usize> {
        let mut path = vec![i];
        let mut cur = i;
        while let Some(p) = self.parents[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Recompute every cost from the parent links (test oracle).
    pub fn recomputed_costs(&self) -> Vec<f64> {
        let mut costs = vec![f64::NAN; self.len()];
        costs[0] = 0.0;
        let mut stack = vec![0usize];
        let mut visited = 1usize;
        while let Some(n) = stack.pop() {
            for &c in &self.children[n] {
                costs[c] = costs[n] + self.configs[n].dist(&self.configs[c]);
                visited += 1;
                stack.push(c);
            }
        }
        assert_eq!(visited, self.len(), "parent graph is not a rooted tree");
        costs
    }
}

/// Step outcome of one sampler draw that reached a collision check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    NodeAdded { index: usize, connects_target: bool },
    InvalidObstacle,
    InvalidConnection,
}

/// Move from `from` toward `toward`, at most `eta` far.
pub fn steer(from: &Config, toward: &Config, eta: f64) -> Config {
    assert!(eta > 0.0);
    let d = from.dist(toward);
    if d <= eta {
        return toward.clone();
    }
    let t = eta / d;
    Config::new(
        from.coords()
            .iter()
            .zip(toward.coords())
            .map(|(a, b)| (a + (b - a) * t).clamp(0.0, 1.0))
            .collect(),
    )
}

/// One RRT* extension attempt: draw (with optional informed rejection),
/// validity check, steer, connect, choose parent within the shrinking
/// radius, insert, rewire. Returns the outcome and the number of informed
/// rejections spent before a draw passed the filter.
pub fn rrt_star_step(
    tree: &mut RoadmapTree,
    sampler: &mut Sampler<'_>,
    env: &Environment,
    q_target: &Config,
    params: &PlannerParams,
    informed: Option<&InformedSet>,
) -> (StepOutcome, u64) {
    let mut rejected = 0u64;
    let q_rand = loop {
        let q = sampler.next();
        match informed {
            // Outside the hyperspheroid the sample cannot improve the
            // solution; discard it without any collision check.
            Some(set) if !set.contains(&q) => rejected += 1,
            _ => break q,
        }
    };
    (extend(tree, q_rand, env, q_target, params), rejected)
}

/// The post-sampling part of an extension attempt.
pub fn extend(
    tree: &mut RoadmapTree,
    q_rand: Config,
    env: &Environment,
    q_target: &Config,
    params: &PlannerParams,
) -> StepOutcome {
    if !is_valid(&q_rand, env) {
        return StepOutcome::InvalidObstacle;
    }

    let i_near = tree.nearest(&q_rand);
    let q_new = steer(tree.config(i_near), &q_rand, params.eta);
    if !edge_valid(tree.config(i_near), &q_new, env) {
        return StepOutcome::InvalidConnection;
    }

    let n = tree.len() as f64;
    let d = q_new.dim() as f64;
    let radius = (params.gamma * (n.ln() / n).powf(1.0 / d)).min(params.eta);
    let neighbors = tree.near(&q_new, radius);

    // Candidate parents in ascending prospective cost; the first collision
    // free candidate is the optimal choice.
    let mut parent = i_near;
    let parent_cost = tree.cost(i_near) + tree.config(i_near).dist(&q_new);
    let mut candidates: Vec<(f64, usize)> = neighbors
        .iter()
        .map(|&i| (tree.cost(i) + tree.config(i).dist(&q_new), i))
        .collect();
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    for (cost, i) in &candidates {
        if *cost >= parent_cost {
            break;
        }
        if *i != i_near && edge_valid(tree.config(*i), &q_new, env) {
            parent = *i;
            break;
        }
    }

    let index = tree.insert(q_new, parent);

    for &i in &neighbors {
        if i == parent || i == index {
            continue;
        }
        let through_new = tree.cost(index) + tree.config(index).dist(tree.config(i));
        if through_new + 1e-12 < tree.cost(i)
            && edge_valid(tree.config(index), tree.config(i), env)
        {
            tree.rewire(i, index);
        }
    }

    let connects_target = tree.config(index).dist(q_target) <= params.eta
        && edge_valid(tree.config(index), q_target, env);
    StepOutcome::NodeAdded {
        index,
        connects_target,
    }
}

/// Run a planner to its node budget, recording metrics at every checkpoint
/// interval. "No solution" is a valid result.
pub fn plan(run: &PlannerRun, sampler: &mut Sampler<'_>) -> (Option<Trajectory>, RunMetrics) {
    assert!(
        is_valid(&run.q_init, &run.env),
        "q_init is not collision free"
    );
    assert!(
        is_valid(&run.q_target, &run.env),
        "q_target is not collision free"
    );
    let start = Instant::now();
    match run.planner {
        PlannerKind::RrtStar => plan_single(run, sampler, false, start),
        PlannerKind::InformedRrtStar => plan_single(run, sampler, true, start),
        PlannerKind::BiRrtStar => plan_bidirectional(run, sampler, start),
    }
}

fn plan_single(
    run: &PlannerRun,
    sampler: &mut Sampler<'_>,
    informed: bool,
    start: Instant,
) -> (Option<Trajectory>, RunMetrics) {
    let mut tree = RoadmapTree::new(run.q_init.clone());
    let mut metrics = RunMetrics {
        best_cost: f64::INFINITY,
        ..RunMetrics::default()
    };
    // Nodes with a validated closing edge to the goal region.
    let mut goal_links: Vec<usize> = Vec::new();
    let mut informed_set: Option<InformedSet> = None;
    let mut attempts = 0u64;

    while metrics.nodes_added < run.budget as u64 {
        attempts += 1;
        let goal_attempt = goal_links.is_empty()
            && attempts % run.params.goal_attempt_interval as u64 == 0;
        let (outcome, rejected) = if goal_attempt {
            // Directed extension straight at the goal; no sampler draw.
            (
                extend(
                    &mut tree,
                    run.q_target.clone(),
                    &run.env,
                    &run.q_target,
                    &run.params,
                ),
                0,
            )
        } else {
            rrt_star_step(
                &mut tree,
                sampler,
                &run.env,
                &run.q_target,
                &run.params,
                informed_set.as_ref(),
            )
        };
        metrics.informed_rejections += rejected;
        metrics.total_samples += 1;
        match outcome {
            StepOutcome::InvalidObstacle => metrics.invalid_obstacles += 1,
            StepOutcome::InvalidConnection => metrics.invalid_connections += 1,
            StepOutcome::NodeAdded {
                index,
                connects_target,
            } => {
                metrics.nodes_added += 1;
                if connects_target {
                    goal_links.push(index);
                }
                let best = goal_links
                    .iter()
                    .map(|&i| tree.cost(i) + tree.config(i).dist(&run.q_target))
                    .fold(f64::INFINITY, f64::min);
                if best.is_finite() {
                    if metrics.first_solution_cost.is_none() {
                        metrics.first_solution_cost = Some(best);
                        metrics.first_solution_nodes = Some(metrics.nodes_added);
                    }
                    metrics.best_cost = best;
                    if informed {
                        informed_set =
                            Some(InformedSet::new(&run.q_init, &run.q_target, best));
                    }
                }
                if metrics.nodes_added % run.params.checkpoint_interval as u64 == 0 {
                    metrics.checkpoints.push(CheckpointRow {
                        nodes: metrics.nodes_added,
                        best_cost: metrics.best_cost,
                        invalid_connections: metrics.invalid_connections,
                        invalid_obstacles: metrics.invalid_obstacles,
                        total_samples: metrics.total_samples,
                        elapsed_seconds: start.elapsed().as_secs_f64(),
                    });
                }
                if run.stop_on_first_solution && metrics.best_cost.is_finite() {
                    break;
                }
            }
        }
    }
    metrics.elapsed_seconds = start.elapsed().as_secs_f64();

    let trajectory = goal_links
        .iter()
        .copied()
        .min_by(|&a, &b| {
            let ca = tree.cost(a) + tree.config(a).dist(&run.q_target);
            let cb = tree.cost(b) + tree.config(b).dist(&run.q_target);
            ca.partial_cmp(&cb).unwrap()
        })
        .map(|best| {
            let mut waypoints: Vec<Config> = tree
                .path_from_root(best)
                .into_iter()
                .map(|i| tree.config(i).clone())
                .collect();
            let cost = tree.cost(best) + tree.config(best).dist(&run.q_target);
            waypoints.push(run.q_target.clone());
            Trajectory { waypoints, cost }
        });
    if let Some(t) = &trajectory {
        metrics.best_cost = t.cost;
    }
    (trajectory, metrics)
}

fn plan_bidirectional(
    run: &PlannerRun,
    sampler: &mut Sampler<'_>,
    start: Instant,
) -> (Option<Trajectory>, RunMetrics) {
    let mut trees = [
        RoadmapTree::new(run.q_init.clone()),
        RoadmapTree::new(run.q_target.clone()),
    ];
    let roots = [run.q_init.clone(), run.q_target.clone()];
    let mut metrics = RunMetrics {
        best_cost: f64::INFINITY,
        ..RunMetrics::default()
    };
    // Validated bridges: (node in start tree, node in goal tree, gap length).
    let mut links: Vec<(usize, usize, f64)> = Vec::new();
    let mut active = 0usize;

    let mut attempts = 0u64;
    while metrics.nodes_added < run.budget as u64 {
        attempts += 1;
        // Steer the active tree toward samples; the opposite root acts as
        // the goal for target-connection bookkeeping.
        let other_root = &roots[1 - active];
        let goal_attempt =
            links.is_empty() && attempts % run.params.goal_attempt_interval as u64 == 0;
        let (outcome, _) = if goal_attempt {
            (
                extend(
                    &mut trees[active],
                    other_root.clone(),
                    &run.env,
                    other_root,
                    &run.params,
                ),
                0u64,
            )
        } else {
            rrt_star_step(
                &mut trees[active],
                sampler,
                &run.env,
                other_root,
                &run.params,
                None,
            )
        };
        metrics.total_samples += 1;
        match outcome {
            StepOutcome::InvalidObstacle => metrics.invalid_obstacles += 1,
            StepOutcome::InvalidConnection => metrics.invalid_connections += 1,
            StepOutcome::NodeAdded { index, .. } => {
                metrics.nodes_added += 1;
                let q_new = trees[active].config(index).clone();
                let other = 1 - active;
                let j = trees[other].nearest(&q_new);
                let gap = trees[other].config(j).dist(&q_new);
                if gap <= run.params.eta
                    && edge_valid(&q_new, trees[other].config(j), &run.env)
                {
                    links.push(if active == 0 {
                        (index, j, gap)
                    } else {
                        (j, index, gap)
                    });
                }
                let best = links
                    .iter()
                    .map(|&(a, b, gap)| trees[0].cost(a) + gap + trees[1].cost(b))
                    .fold(f64::INFINITY, f64::min);
                if best.is_finite() {
                    if metrics.first_solution_cost.is_none() {
                        metrics.first_solution_cost = Some(best);
                        metrics.first_solution_nodes = Some(metrics.nodes_added);
                    }
                    metrics.best_cost = best;
                }
                if metrics.nodes_added % run.params.checkpoint_interval as u64 == 0 {
                    metrics.checkpoints.push(CheckpointRow {
                        nodes: metrics.nodes_added,
                        best_cost: metrics.best_cost,
                        invalid_connections: metrics.invalid_connections,
                        invalid_obstacles: metrics.invalid_obstacles,
                        total_samples: metrics.total_samples,
                        elapsed_seconds: start.elapsed().as_secs_f64(),
                    });
                }
                if run.stop_on_first_solution && metrics.best_cost.is_finite() {
                    break;
                }
            }
        }
        active = 1 - active;
    }
    metrics.elapsed_seconds = start.elapsed().as_secs_f64();

    let trajectory = links
        .iter()
        .min_by(|x, y| {
            let cx = trees[0].cost(x.0) + x.2 + trees[1].cost(x.1);
            let cy = trees[0].cost(y.0) + y.2 + trees[1].cost(y.1);
            cx.partial_cmp(&cy).unwrap()
        })
        .map(|&(a, b, gap)| {
            let mut waypoints: Vec<Config> = trees[0]
                .path_from_root(a)
                .into_iter()
                .map(|i| trees[0].config(i).clone())
                .collect();
            let mut tail: Vec<Config> = trees[1]
                .path_from_root(b)
                .into_iter()
                .map(|i| trees[1].config(i).clone())
                .collect();
            tail.reverse();
            let cost = trees[0].cost(a) + gap + trees[1].cost(b);
            waypoints.extend(tail);
            Trajectory { waypoints, cost }
        });
    if let Some(t) = &trajectory {
        metrics.best_cost = t.cost;
    }
    (trajectory, metrics)
}
