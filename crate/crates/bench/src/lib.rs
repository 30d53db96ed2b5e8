//! Shared fixtures for the criterion benchmarks.

use rand::Rng;

use flowplan::env::{encode_workspace, generate_environment, Config, Environment, RobotKind};
use flowplan::flow::{ConditioningContext, FlowLayout, FlowModel};

/// Production-layout flow with small random (non-identity) parameters.
pub fn bench_model(robot: RobotKind, seed: u64) -> FlowModel {
    let mut model = FlowModel::new(FlowLayout::standard(robot), seed);
    let mut rng = flowplan::seed::rng(seed ^ 0x5eed);
    for p in model.params_mut() {
        *p = (rng.gen::<f64>() - 0.5) * 0.2;
    }
    model
}

pub fn bench_env(robot: RobotKind, seed: u64) -> Environment {
    generate_environment(seed, robot, 0.25).expect("benchmark environment")
}

pub fn bench_context(env: &Environment) -> ConditioningContext {
    let dim = env.robot.dim();
    let q_init = Config::new(vec![0.1; dim]);
    let q_target = Config::new(vec![0.9; dim]);
    ConditioningContext::new(&encode_workspace(env), Some(q_init), Some(q_target))
}

pub fn random_configs(dim: usize, count: usize, seed: u64) -> Vec<Config> {
    let mut rng = flowplan::seed::rng(seed);
    (0..count)
        .map(|_| Config::new((0..dim).map(|_| rng.gen::<f64>()).collect()))
        .collect()
}
