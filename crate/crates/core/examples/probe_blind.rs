// quick diagnostic: obstacle-hit fraction of flow samples, train vs held-out env
use flowplan::dataset::Dataset;
use flowplan::env::{encode_workspace, generate_environment, is_valid, Config, RobotKind};
use flowplan::flow::{ConditioningContext, FlowModel};
use std::path::Path;

fn hit_fraction(model: &FlowModel, env: &flowplan::env::Environment, a: &Config, b: &Config) -> (f64, f64) {
    let ctx = ConditioningContext::new(&encode_workspace(env), Some(a.clone()), Some(b.clone()));
    let samples = model.sample(&ctx, 2000, 9);
    let invalid = samples.iter().filter(|q| !is_valid(q, env)).count() as f64 / 2000.0;
    (invalid, flowplan::env::obstacle_fraction(env))
}

fn main() {
    let model = FlowModel::load(Path::new("/tmp/exp/model3-60.ckpt")).unwrap();
    let data = Dataset::load(Path::new("/tmp/exp/data3.jsonl")).unwrap();
    // training env 0 with one of its demo endpoint pairs
    let demo = &data.demonstrations[0];
    let tenv = &data.environments[demo.env_index].environment;
    let (inv_t, area_t) = hit_fraction(&model, tenv, &demo.q_init, &demo.q_target);
    println!("train env: invalid {inv_t:.3} vs obstacle area {area_t:.3}");
    // held-out env
    let henv = generate_environment(424242, RobotKind::PointRobot2, 0.4).unwrap();
    let mut rng = flowplan::seed::rng(5);
    use rand::Rng;
    let mut draw = || loop {
        let q = Config::new(vec![rng.gen(), rng.gen()]);
        if is_valid(&q, &henv) { break q; }
    };
    let a = draw(); let b = draw();
    let (inv_h, area_h) = hit_fraction(&model, &henv, &a, &b);
    println!("held-out env: invalid {inv_h:.3} vs obstacle area {area_h:.3}");
}
