//! Workspace representation, procedural environment generation, collision
//! checking, planar-arm kinematics and the fixed-size workspace encoding.
//!
//! All coordinates live in the unit square; configurations live in the unit
//! cube of the robot's C-space. Every operation here is a pure function of
//! its inputs, so environments and encodings can be shared freely across
//! threads.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::seed;

/// Number of boundary sample points in a workspace encoding.
pub const ENCODING_POINTS: usize = 64;
/// Sentinel coordinate for padded encoding slots.
pub const ENCODING_SENTINEL: f64 = -1.0;
/// Monte-Carlo sample count for obstacle-area estimates.
pub const MC_POINTS: usize = 10_000;
/// Collision-check resolution along C-space edges (below half the smallest
/// obstacle radius).
pub const EDGE_RESOLUTION: f64 = 0.005;
/// Planar arm link lengths, workspace units.
pub const ARM_LINK_LEN: f64 = 0.15;

const RADIUS_MIN: f64 = 0.03;
const RADIUS_MAX: f64 = 0.12;
const MAX_DISCS: usize = 500;
const OBS_RATIO_MIN: f64 = 0.05;
const OBS_RATIO_MAX: f64 = 0.6;

/// Robot embodiment planned for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RobotKind {
    /// Point robot in the plane; C-space is [0,1]^2.
    #[serde(rename = "point2")]
    PointRobot2,
    /// Mobile 2-link arm: (x, y, phi0, phi1); C-space is [0,1]^4 with the
    /// angle coordinates mapped affinely onto [-pi, pi].
    #[serde(rename = "arm4")]
    PlanarArm4,
}

impl RobotKind {
    pub fn dim(self) -> usize {
        match self {
            RobotKind::PointRobot2 => 2,
            RobotKind::PlanarArm4 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RobotKind::PointRobot2 => "point2",
            RobotKind::PlanarArm4 => "arm4",
        }
    }
}

/// A circular workspace obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Obstacle {
    pub fn new(cx: f64, cy: f64, radius: f64) -> Self {
        assert!(radius > 0.0, "obstacle radius must be positive");
        Obstacle {
            center: [cx, cy],
            radius,
        }
    }

    #[inline]
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        dx * dx + dy * dy < self.radius * self.radius
    }
}

/// A point in normalized C-space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    coords: Vec<f64>,
}

impl Config {
    /// Build a configuration; every coordinate must lie in [0,1].
    pub fn new(coords: Vec<f64>) -> Self {
        assert!(
            coords.iter().all(|c| (0.0..=1.0).contains(c)),
            "configuration coordinate outside [0,1]: {coords:?}"
        );
        Config { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Euclidean C-space distance.
    pub fn dist(&self, other: &Config) -> f64 {
        dist(&self.coords, &other.coords)
    }
}

impl std::ops::Index<usize> for Config {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.coords[i]
    }
}

/// Euclidean distance between coordinate slices of equal length.
#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A 2D workspace with disc obstacles.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub obstacles: Vec<Obstacle>,
    pub robot: RobotKind,
    pub rng_seed: u64,
    pub obs_ratio: f64,
}

/// Fixed-size obstacle boundary cloud: `2 * ENCODING_POINTS` reals, padded
/// slots carry the sentinel value and a false mask flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceEncoding {
    pub points: Vec<f64>,
    pub mask: Vec<bool>,
}

impl WorkspaceEncoding {
    /// Flattened view used as the leading part of a conditioning vector.
    pub fn flat(&self) -> &[f64] {
        &self.points
    }

    pub fn len_flat(&self) -> usize {
        self.points.len()
    }
}

/// The shared Monte-Carlo quadrature point set. One fixed point set is used
/// for both generation and validation so the area invariant is exact rather
/// than statistical.
fn mc_points() -> &'static [[f64; 2]] {
    static POINTS: OnceLock<Vec<[f64; 2]>> = OnceLock::new();
    POINTS.get_or_init(|| {
        let mut rng = seed::rng(seed::derive(0xC0FFEE, "mc-quadrature"));
        (0..MC_POINTS)
            .map(|_| [rng.gen::<f64>(), rng.gen::<f64>()])
            .collect()
    })
}

/// Monte-Carlo estimate of the obstacle area fraction of the unit square.
pub fn obstacle_fraction(env: &Environment) -> f64 {
    let covered = mc_points()
        .iter()
        .filter(|p| env.obstacles.iter().any(|o| o.contains(**p)))
        .count();
    covered as f64 / MC_POINTS as f64
}

/// Procedurally generate an environment with the requested obstacle density.
///
/// Discs are added (center uniform in the unit square, radius uniform in
/// [0.03, 0.12]) until the Monte-Carlo obstacle fraction reaches `obs_ratio`.
/// The ratio is clamped into [0.05, 0.6]; densities that cannot be met within
/// 500 discs are reported as an error.
pub fn generate_environment(seed: u64, robot: RobotKind, obs_ratio: f64) -> Result<Environment> {
    let ratio = obs_ratio.clamp(OBS_RATIO_MIN, OBS_RATIO_MAX);
    let mut rng = seed::rng(seed::derive(seed, "env-gen"));
    let points = mc_points();
    let mut covered = vec![false; points.len()];
    let mut covered_count = 0usize;
    let mut obstacles = Vec::new();

    loop {
        if obstacles.len() >= MAX_DISCS {
            return Err(Error::OverDense {
                requested: ratio,
                discs: obstacles.len(),
            });
        }
        let cx = rng.gen::<f64>();
        let cy = rng.gen::<f64>();
        let radius = RADIUS_MIN + rng.gen::<f64>() * (RADIUS_MAX - RADIUS_MIN);
        let disc = Obstacle::new(cx, cy, radius);
        for (i, p) in points.iter().enumerate() {
            if !covered[i] && disc.contains(*p) {
                covered[i] = true;
                covered_count += 1;
            }
        }
        obstacles.push(disc);
        if covered_count as f64 / points.len() as f64 >= ratio {
            break;
        }
    }

    Ok(Environment {
        obstacles,
        robot,
        rng_seed: seed,
        obs_ratio: ratio,
    })
}

/// Sample the fixed-size boundary point cloud of an environment.
///
/// `ENCODING_POINTS` boundary points are allocated to obstacles proportional
/// to perimeter (largest-remainder rounding) and sampled at seeded-uniform
/// angles. Points are clipped to the unit square and stored in
/// lexicographic (x, y) order: a canonical ordering gives every input slot
/// of the conditioner networks a stable spatial meaning across
/// environments. With no obstacles every slot is padding.
pub fn encode_workspace(env: &Environment) -> WorkspaceEncoding {
    let mut points = vec![ENCODING_SENTINEL; 2 * ENCODING_POINTS];
    let mut mask = vec![false; ENCODING_POINTS];
    if env.obstacles.is_empty() {
        return WorkspaceEncoding { points, mask };
    }

    let counts = proportional_counts(
        &env.obstacles.iter().map(|o| o.radius).collect::<Vec<_>>(),
        ENCODING_POINTS,
    );
    let mut rng = seed::rng(seed::derive(env.rng_seed, "encode"));
    let mut cloud: Vec<[f64; 2]> = Vec::with_capacity(ENCODING_POINTS);
    for (obstacle, count) in env.obstacles.iter().zip(&counts) {
        for _ in 0..*count {
            let theta = rng.gen::<f64>() * std::f64::consts::TAU;
            let x = obstacle.center[0] + obstacle.radius * theta.cos();
            let y = obstacle.center[1] + obstacle.radius * theta.sin();
            cloud.push([x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)]);
        }
    }
    cloud.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for (slot, p) in cloud.iter().enumerate() {
        points[2 * slot] = p[0];
        points[2 * slot + 1] = p[1];
        mask[slot] = true;
    }
    WorkspaceEncoding { points, mask }
}

/// Largest-remainder allocation of `total` slots proportional to `weights`.
fn proportional_counts(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut remaining = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in order {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }
    counts
}

/// One rigid link of the planar arm in workspace coordinates.
pub type Segment = ([f64; 2], [f64; 2]);

/// Forward kinematics of the mobile 2-link arm.
///
/// Coordinates are (x_base, y_base, phi0, phi1) with angles stored in [0,1]
/// and mapped onto [-pi, pi]. Link 1 leaves the base at phi0; link 2 leaves
/// the link-1 tip at phi0 + phi1.
pub fn forward_kinematics(config: &Config) -> [Segment; 2] {
    assert_eq!(config.dim(), 4, "forward kinematics needs a 4-dof config");
    let base = [config[0], config[1]];
    let phi0 = (config[2] - 0.5) * std::f64::consts::TAU;
    let phi1 = (config[3] - 0.5) * std::f64::consts::TAU;
    let elbow = [
        base[0] + ARM_LINK_LEN * phi0.cos(),
        base[1] + ARM_LINK_LEN * phi0.sin(),
    ];
    let tip = [
        elbow[0] + ARM_LINK_LEN * (phi0 + phi1).cos(),
        elbow[1] + ARM_LINK_LEN * (phi0 + phi1).sin(),
    ];
    [(base, elbow), (elbow, tip)]
}

/// Squared distance from point `p` to segment `ab`.
fn segment_point_dist2(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let dx = a[0] + t * ab[0] - p[0];
    let dy = a[1] + t * ab[1] - p[1];
    dx * dx + dy * dy
}

/// Collision validity of a single configuration.
///
/// Point robot: the point must lie outside (or on the boundary of) every
/// disc. Arm: no link segment may penetrate any disc. The free space is
/// closed, so grazing contact is valid.
pub fn is_valid(config: &Config, env: &Environment) -> bool {
    assert_eq!(
        config.dim(),
        env.robot.dim(),
        "configuration dimension does not match the robot"
    );
    match env.robot {
        RobotKind::PointRobot2 => {
            let p = [config[0], config[1]];
            env.obstacles.iter().all(|o| !o.contains(p))
        }
        RobotKind::PlanarArm4 => {
            let segments = forward_kinematics(config);
            env.obstacles.iter().all(|o| {
                let r2 = o.radius * o.radius;
                segments
                    .iter()
                    .all(|(a, b)| segment_point_dist2(*a, *b, o.center) >= r2)
            })
        }
    }
}

/// Validity of the straight C-space segment between two configurations,
/// checked at interpolated points spaced at most [`EDGE_RESOLUTION`] apart,
/// endpoints included.
pub fn edge_valid(a: &Config, b: &Config, env: &Environment) -> bool {
    edge_valid_at_resolution(a, b, env, EDGE_RESOLUTION)
}

/// Edge validity at an explicit resolution (diagnostic oracle hook).
pub fn edge_valid_at_resolution(a: &Config, b: &Config, env: &Environment, delta: f64) -> bool {
    assert_eq!(a.dim(), b.dim(), "edge endpoints of different dimension");
    let length = a.dist(b);
    let steps = (length / delta).ceil().max(1.0) as usize;
    let n = steps as f64;
    let mut point = vec![0.0; a.dim()];
    for i in 0..=steps {
        // Symmetric barycentric form: swapping a and b yields bit-identical
        // interpolation points, so edge_valid(a, b) == edge_valid(b, a).
        let (wa, wb) = ((steps - i) as f64, i as f64);
        for (k, c) in point.iter_mut().enumerate() {
            *c = (wa * a[k] + wb * b[k]) / n;
        }
        let q = Config { coords: point };
        if !is_valid(&q, env) {
            return false;
        }
        point = q.coords;
    }
    true
}

// ---------------------------------------------------------------------------
// Environment file format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ObstacleRecord {
    cx: f64,
    cy: f64,
    r: f64,
}

#[derive(Serialize, Deserialize)]
struct EnvironmentFile {
    version: u32,
    robot: RobotKind,
    seed: u64,
    obs_ratio: f64,
    obstacles: Vec<ObstacleRecord>,
}

pub const ENV_FILE_VERSION: u32 = 1;

impl Environment {
    pub fn to_json(&self) -> String {
        let file = EnvironmentFile {
            version: ENV_FILE_VERSION,
            robot: self.robot,
            seed: self.rng_seed,
            obs_ratio: self.obs_ratio,
            obstacles: self
                .obstacles
                .iter()
                .map(|o| ObstacleRecord {
                    cx: o.center[0],
                    cy: o.center[1],
                    r: o.radius,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("environment serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Environment> {
        let file: EnvironmentFile = serde_json::from_str(text)?;
        if file.version != ENV_FILE_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported environment file version {}",
                file.version
            )));
        }
        Ok(Environment {
            obstacles: file
                .obstacles
                .iter()
                .map(|o| Obstacle::new(o.cx, o.cy, o.r))
                .collect(),
            robot: file.robot,
            rng_seed: file.seed,
            obs_ratio: file.obs_ratio,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Environment> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Environment::from_json(&text)
    }
}
