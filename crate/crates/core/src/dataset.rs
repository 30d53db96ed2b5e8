//! Expert demonstration collection and dataset files.
//!
//! The expert is the crate's own uniform-sampling RRT* run to a fixed node
//! budget; only configurations on the final near-optimal path are kept, and
//! each path is thinned to a handful of waypoints spaced along its
//! arclength. Demonstrations for distinct (environment, pair) keys carry
//! independent derived seeds, so parallel and serial collection produce
//! identical datasets.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::env::{
    edge_valid, encode_workspace, generate_environment, is_valid, Config, Environment, RobotKind,
    WorkspaceEncoding,
};
use crate::error::{Error, Result};
use crate::flow::ConditioningContext;
use crate::planner::{plan, PlannerKind, PlannerRun, Sampler};
use crate::seed;

/// Maximum kept waypoints per demonstration.
pub const MAX_WAYPOINTS: usize = 12;
/// Minimum C-space separation between demonstration endpoints in one
/// environment.
pub const ENDPOINT_SEPARATION: f64 = 0.05;
/// Minimum span of a single (init, target) pair; short hops teach the
/// sampler little and barely exercise the planner.
pub const PAIR_SPAN: f64 = 0.4;

/// Train/validation membership of a demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

/// Waypoints of one expert path (endpoints excluded) plus its cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub env_index: usize,
    pub q_init: Config,
    pub q_target: Config,
    pub waypoints: Vec<Config>,
    pub path_cost: f64,
    pub split: Split,
}

impl Demonstration {
    /// The endpoint-augmented waypoint chain.
    pub fn chain(&self) -> Vec<&Config> {
        std::iter::once(&self.q_init)
            .chain(self.waypoints.iter())
            .chain(std::iter::once(&self.q_target))
            .collect()
    }

    /// Check the demonstration invariants against its environment.
    pub fn is_consistent(&self, env: &Environment) -> bool {
        if !self.waypoints.iter().all(|w| is_valid(w, env)) {
            return false;
        }
        let chain = self.chain();
        let mut cost = 0.0;
        for pair in chain.windows(2) {
            if !edge_valid(pair[0], pair[1], env) {
                return false;
            }
            cost += pair[0].dist(pair[1]);
        }
        (cost - self.path_cost).abs() <= 1e-9
    }
}

/// One environment of a dataset together with its workspace encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEnv {
    pub environment: Environment,
    pub encoding: WorkspaceEncoding,
}

/// A demonstration corpus over procedurally generated environments.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub robot: RobotKind,
    pub seed: u64,
    pub environments: Vec<DatasetEnv>,
    pub demonstrations: Vec<Demonstration>,
}

/// Generation counts and knobs for [`build_dataset`].
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub n_envs: usize,
    pub pairs_per_env: usize,
    pub robot: RobotKind,
    pub seed: u64,
    /// Expert planner node budget per demonstration.
    pub budget: usize,
    /// Obstacle density range sampled per environment.
    pub obs_ratio_range: (f64, f64),
}

impl DatasetSpec {
    pub fn new(n_envs: usize, pairs_per_env: usize, robot: RobotKind, seed: u64) -> Self {
        DatasetSpec {
            n_envs,
            pairs_per_env,
            robot,
            seed,
            budget: 10_000,
            obs_ratio_range: (0.25, 0.55),
        }
    }

    /// Protocol-scale corpus: 100 maps of roughly 200 endpoint pairs each.
    pub fn paper_scale(robot: RobotKind, seed: u64) -> Self {
        DatasetSpec::new(100, 200, robot, seed)
    }
}

/// Run the expert planner on one problem and keep the sparsified solution
/// path. `None` (no solution within budget) is a normal outcome.
pub fn collect_demonstration(
    env_index: usize,
    env: &Environment,
    q_init: &Config,
    q_target: &Config,
    budget: usize,
    rng_seed: u64,
) -> Option<Demonstration> {
    let run = PlannerRun::new(
        env.clone(),
        q_init.clone(),
        q_target.clone(),
        budget,
        PlannerKind::RrtStar,
    );
    let mut sampler = Sampler::uniform(env.robot.dim(), rng_seed);
    let (trajectory, _) = plan(&run, &mut sampler);
    let trajectory = trajectory?;

    let waypoints = sparsify(&trajectory.waypoints, env);
    let mut cost = 0.0;
    let mut prev = q_init;
    for w in waypoints.iter().chain(std::iter::once(q_target)) {
        cost += prev.dist(w);
        prev = w;
    }
    Some(Demonstration {
        env_index,
        q_init: q_init.clone(),
        q_target: q_target.clone(),
        waypoints,
        path_cost: cost,
        split: Split::Train,
    })
}

/// Thin a solution path to at most [`MAX_WAYPOINTS`] interior waypoints
/// spaced uniformly along arclength. Shortcut segments introduced by the
/// thinning are collision checked; if any fails, the full interior node
/// list (valid by construction) is kept instead.
fn sparsify(path: &[Config], env: &Environment) -> Vec<Config> {
    let interior = &path[1..path.len() - 1];
    if interior.len() <= MAX_WAYPOINTS {
        return interior.to_vec();
    }
    let mut arclen = vec![0.0; path.len()];
    for i in 1..path.len() {
        arclen[i] = arclen[i - 1] + path[i - 1].dist(&path[i]);
    }
    let total = arclen[path.len() - 1];
    let mut picked: Vec<usize> = Vec::with_capacity(MAX_WAYPOINTS);
    let mut cursor = 1;
    for j in 0..MAX_WAYPOINTS {
        let target = total * (j as f64 + 1.0) / (MAX_WAYPOINTS as f64 + 1.0);
        let mut best = cursor;
        for i in cursor..path.len() - 1 {
            if (arclen[i] - target).abs() <= (arclen[best] - target).abs() {
                best = i;
            }
        }
        if picked.last() != Some(&best) {
            picked.push(best);
        }
        cursor = best + 1;
        if cursor >= path.len() - 1 {
            break;
        }
    }
    let thinned: Vec<Config> = picked.iter().map(|&i| path[i].clone()).collect();
    let mut chain: Vec<&Config> = Vec::with_capacity(thinned.len() + 2);
    chain.push(&path[0]);
    chain.extend(thinned.iter());
    chain.push(&path[path.len() - 1]);
    let all_valid = chain.windows(2).all(|w| edge_valid(w[0], w[1], env));
    if all_valid {
        thinned
    } else {
        interior.to_vec()
    }
}

fn sample_valid_config(
    env: &Environment,
    rng: &mut impl Rng,
    taken: &[Config],
    tries: usize,
) -> Option<Config> {
    let dim = env.robot.dim();
    for _ in 0..tries {
        let q = Config::new((0..dim).map(|_| rng.gen::<f64>()).collect());
        if is_valid(&q, env) && taken.iter().all(|t| t.dist(&q) >= ENDPOINT_SEPARATION) {
            return Some(q);
        }
    }
    None
}

/// Generate environments, sample well-separated valid endpoint pairs,
/// collect expert demonstrations (dropping failures) and tag a deterministic
/// tenth of the pairs as the validation split.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    assert!(spec.n_envs >= 1, "need at least one environment");
    let (lo, hi) = spec.obs_ratio_range;
    let mut environments = Vec::with_capacity(spec.n_envs);
    for i in 0..spec.n_envs {
        let env_seed = seed::derive_n(spec.seed, "dataset-env", &[i as u64]);
        let mut ratio_rng = seed::rng(seed::derive_n(spec.seed, "dataset-ratio", &[i as u64]));
        let ratio = lo + ratio_rng.gen::<f64>() * (hi - lo);
        let environment = generate_environment(env_seed, spec.robot, ratio)?;
        let encoding = encode_workspace(&environment);
        environments.push(DatasetEnv {
            environment,
            encoding,
        });
    }

    // Endpoint pairs, sequential per environment for determinism.
    let mut problems: Vec<(usize, usize, Config, Config)> = Vec::new();
    let mut failed_attempts = 0usize;
    for (i, dataset_env) in environments.iter().enumerate() {
        let mut rng = seed::rng(seed::derive_n(spec.seed, "dataset-pairs", &[i as u64]));
        let mut taken: Vec<Config> = Vec::new();
        for j in 0..spec.pairs_per_env {
            let q_init = sample_valid_config(&dataset_env.environment, &mut rng, &taken, 1000);
            let q_init = match q_init {
                Some(q) => q,
                None => {
                    failed_attempts += 1;
                    continue;
                }
            };
            taken.push(q_init.clone());
            // Prefer nontrivial problems: a wide span and a blocked straight
            // segment. Fall back to any wide pair when the workspace is too
            // open to block the segment.
            let mut q_target = None;
            let mut fallback = None;
            for _ in 0..1000 {
                if let Some(q) =
                    sample_valid_config(&dataset_env.environment, &mut rng, &taken, 1)
                {
                    if q.dist(&q_init) < PAIR_SPAN {
                        continue;
                    }
                    if !edge_valid(&q_init, &q, &dataset_env.environment) {
                        q_target = Some(q);
                        break;
                    }
                    if fallback.is_none() {
                        fallback = Some(q);
                    }
                }
            }
            let q_target = match q_target.or(fallback) {
                Some(q) => q,
                None => {
                    taken.pop();
                    failed_attempts += 1;
                    continue;
                }
            };
            taken.push(q_target.clone());
            problems.push((i, j, q_init, q_target));
        }
    }

    // Independent expert runs; derived per-problem seeds keep the result
    // identical whether this runs serially or across a worker pool.
    let demos: Vec<Option<Demonstration>> = problems
        .par_iter()
        .map(|(i, j, q_init, q_target)| {
            let demo_seed = seed::derive_n(spec.seed, "dataset-demo", &[*i as u64, *j as u64]);
            collect_demonstration(
                *i,
                &environments[*i].environment,
                q_init,
                q_target,
                spec.budget,
                demo_seed,
            )
            .map(|mut demo| {
                let global = i * spec.pairs_per_env + j;
                demo.split = if global % 10 == 9 {
                    Split::Validation
                } else {
                    Split::Train
                };
                demo
            })
        })
        .collect();

    let total_attempts = spec.n_envs * spec.pairs_per_env;
    let failures = failed_attempts + demos.iter().filter(|d| d.is_none()).count();
    if failures * 10 > total_attempts * 9 {
        return Err(Error::PathologicalEnvironment {
            failed: failures,
            attempted: total_attempts,
        });
    }

    Ok(Dataset {
        robot: spec.robot,
        seed: spec.seed,
        environments,
        demonstrations: demos.into_iter().flatten().collect(),
    })
}

impl Dataset {
    /// One (configuration, context) row per waypoint; a demonstration's rows
    /// share the context assembled from its environment encoding and
    /// endpoints.
    pub fn training_rows(&self) -> Vec<(Config, ConditioningContext)> {
        self.rows_for_split(None)
    }

    /// Rows restricted to one split (or all rows when `None`).
    pub fn rows_for_split(&self, split: Option<Split>) -> Vec<(Config, ConditioningContext)> {
        let mut rows = Vec::new();
        for demo in &self.demonstrations {
            if let Some(s) = split {
                if demo.split != s {
                    continue;
                }
            }
            let ctx = ConditioningContext::new(
                &self.environments[demo.env_index].encoding,
                Some(demo.q_init.clone()),
                Some(demo.q_target.clone()),
            );
            for w in &demo.waypoints {
                rows.push((w.clone(), ctx.clone()));
            }
        }
        rows
    }
}

// ---------------------------------------------------------------------------
// Dataset file format: JSON lines (header, environments, demonstrations)
// ---------------------------------------------------------------------------

pub const DATASET_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ObstacleRecord {
    cx: f64,
    cy: f64,
    r: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum DatasetRecord {
    Header {
        version: u32,
        robot: RobotKind,
        seed: u64,
        n_envs: usize,
        n_demos: usize,
    },
    Env {
        index: usize,
        seed: u64,
        obs_ratio: f64,
        obstacles: Vec<ObstacleRecord>,
    },
    Demo(Demonstration),
}

impl Dataset {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = DatasetRecord::Header {
            version: DATASET_FILE_VERSION,
            robot: self.robot,
            seed: self.seed,
            n_envs: self.environments.len(),
            n_demos: self.demonstrations.len(),
        };
        out.push_str(&serde_json::to_string(&header).unwrap());
        out.push('\n');
        for (index, env) in self.environments.iter().enumerate() {
            let rec = DatasetRecord::Env {
                index,
                seed: env.environment.rng_seed,
                obs_ratio: env.environment.obs_ratio,
                obstacles: env
                    .environment
                    .obstacles
                    .iter()
                    .map(|o| ObstacleRecord {
                        cx: o.center[0],
                        cy: o.center[1],
                        r: o.radius,
                    })
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&rec).unwrap());
            out.push('\n');
        }
        for demo in &self.demonstrations {
            out.push_str(&serde_json::to_string(&DatasetRecord::Demo(demo.clone())).unwrap());
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, origin: &Path) -> Result<Dataset> {
        let corrupt = |reason: String| Error::CorruptFile {
            path: origin.to_path_buf(),
            reason,
        };
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header: DatasetRecord = serde_json::from_str(
            lines.next().ok_or_else(|| corrupt("empty file".into()))?,
        )?;
        let (robot, seed, n_envs, n_demos) = match header {
            DatasetRecord::Header {
                version,
                robot,
                seed,
                n_envs,
                n_demos,
            } => {
                if version != DATASET_FILE_VERSION {
                    return Err(corrupt(format!("unsupported dataset version {version}")));
                }
                (robot, seed, n_envs, n_demos)
            }
            _ => return Err(corrupt("first record is not a header".into())),
        };
        let mut environments = Vec::with_capacity(n_envs);
        let mut demonstrations = Vec::with_capacity(n_demos);
        for line in lines {
            match serde_json::from_str::<DatasetRecord>(line)? {
                DatasetRecord::Header { .. } => {
                    return Err(corrupt("duplicate header record".into()))
                }
                DatasetRecord::Env {
                    index,
                    seed,
                    obs_ratio,
                    obstacles,
                } => {
                    if index != environments.len() {
                        return Err(corrupt(format!("environment {index} out of order")));
                    }
                    let environment = Environment {
                        obstacles: obstacles
                            .iter()
                            .map(|o| crate::env::Obstacle::new(o.cx, o.cy, o.r))
                            .collect(),
                        robot,
                        rng_seed: seed,
                        obs_ratio,
                    };
                    let encoding = encode_workspace(&environment);
                    environments.push(DatasetEnv {
                        environment,
                        encoding,
                    });
                }
                DatasetRecord::Demo(demo) => {
                    if demo.env_index >= n_envs {
                        return Err(corrupt(format!(
                            "demonstration references environment {}",
                            demo.env_index
                        )));
                    }
                    demonstrations.push(demo);
                }
            }
        }
        if environments.len() != n_envs || demonstrations.len() != n_demos {
            return Err(corrupt("record counts do not match header".into()));
        }
        Ok(Dataset {
            robot,
            seed,
            environments,
            demonstrations,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dataset::from_jsonl(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Obstacle;

    fn empty_env() -> Environment {
        Environment {
            obstacles: vec![],
            robot: RobotKind::PointRobot2,
            rng_seed: 0,
            obs_ratio: 0.05,
        }
    }

    /// Straight-line lower-bound oracle in a free workspace.
    #[test]
    fn demonstration_in_empty_environment() {
        let env = empty_env();
        let q_init = Config::new(vec![0.1, 0.1]);
        let q_target = Config::new(vec![0.9, 0.9]);
        let demo = collect_demonstration(0, &env, &q_init, &q_target, 10_000, 7)
            .expect("free space is solvable");
        let straight = q_init.dist(&q_target);
        assert!(demo.path_cost <= straight * 1.05, "cost {}", demo.path_cost);
        assert!(demo.waypoints.len() <= MAX_WAYPOINTS);
        assert!(demo.is_consistent(&env));
    }

    #[test]
    fn enclosed_start_is_a_failure() {
        let mut obstacles = Vec::new();
        for (dx, dy) in [(0.13, 0.0), (-0.13, 0.0), (0.0, 0.13), (0.0, -0.13)] {
            obstacles.push(Obstacle::new(0.5 + dx, 0.5 + dy, 0.12));
        }
        let env = Environment {
            obstacles,
            robot: RobotKind::PointRobot2,
            rng_seed: 0,
            obs_ratio: 0.05,
        };
        let q_init = Config::new(vec![0.5, 0.5]);
        assert!(is_valid(&q_init, &env), "center must start valid");
        let q_target = Config::new(vec![0.95, 0.95]);
        let demo = collect_demonstration(0, &env, &q_init, &q_target, 500, 3);
        assert!(demo.is_none(), "sealed start cannot reach the target");
    }

    #[test]
    fn generated_demonstrations_hold_their_invariants() {
        let mut spec = DatasetSpec::new(2, 3, RobotKind::PointRobot2, 11);
        spec.budget = 3000;
        let dataset = build_dataset(&spec).unwrap();
        assert!(!dataset.demonstrations.is_empty());
        for demo in &dataset.demonstrations {
            let env = &dataset.environments[demo.env_index].environment;
            assert!(demo.is_consistent(env));
            assert!(demo.waypoints.iter().all(|w| is_valid(w, env)));
        }
        // Endpoint separation within each environment.
        for (i, _) in dataset.environments.iter().enumerate() {
            let endpoints: Vec<&Config> = dataset
                .demonstrations
                .iter()
                .filter(|d| d.env_index == i)
                .flat_map(|d| [&d.q_init, &d.q_target])
                .collect();
            for a in 0..endpoints.len() {
                for b in a + 1..endpoints.len() {
                    assert!(endpoints[a].dist(endpoints[b]) >= ENDPOINT_SEPARATION);
                }
            }
        }
    }

    #[test]
    fn build_is_deterministic() {
        let mut spec = DatasetSpec::new(1, 1, RobotKind::PointRobot2, 21);
        spec.budget = 2000;
        let a = build_dataset(&spec).unwrap();
        let b = build_dataset(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let mut spec = DatasetSpec::new(2, 2, RobotKind::PlanarArm4, 31);
        spec.budget = 1500;
        let dataset = build_dataset(&spec).unwrap();
        let text = dataset.to_jsonl();
        let back = Dataset::from_jsonl(&text, Path::new("mem")).unwrap();
        assert_eq!(dataset, back);
        assert_eq!(text, back.to_jsonl());
    }

    /// Counting oracle: the row count equals an independent recount of
    /// waypoints, and rows inherit their demonstration's context.
    #[test]
    fn training_rows_match_recount() {
        let mut spec = DatasetSpec::new(2, 3, RobotKind::PointRobot2, 41);
        spec.budget = 2000;
        let dataset = build_dataset(&spec).unwrap();
        let rows = dataset.training_rows();
        let recount: usize = dataset.demonstrations.iter().map(|d| d.waypoints.len()).sum();
        assert_eq!(rows.len(), recount);
        let train = dataset.rows_for_split(Some(Split::Train)).len();
        let val = dataset.rows_for_split(Some(Split::Validation)).len();
        assert_eq!(train + val, recount);
    }

    #[test]
    fn paper_scale_counts() {
        let spec = DatasetSpec::paper_scale(RobotKind::PointRobot2, 1);
        assert_eq!((spec.n_envs, spec.pairs_per_env), (100, 200));
        assert_eq!(spec.budget, 10_000);
    }

    #[test]
    fn hopeless_budget_aborts() {
        let mut spec = DatasetSpec::new(2, 2, RobotKind::PointRobot2, 51);
        spec.budget = 2; // no problem is solvable in two nodes
        let err = build_dataset(&spec);
        assert!(matches!(err, Err(Error::PathologicalEnvironment { .. })));
    }
}
