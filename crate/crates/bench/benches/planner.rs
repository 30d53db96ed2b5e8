use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use flowplan::env::{edge_valid, RobotKind};
use flowplan::planner::{plan, KdTree, PlannerKind, PlannerRun, Sampler};
use flowplan_bench::{bench_env, random_configs};

fn planner_benches(c: &mut Criterion) {
    let env = bench_env(RobotKind::PointRobot2, 5);

    c.bench_function("kd_nearest_10k", |b| {
        let points = random_configs(2, 10_000, 23);
        let mut tree = KdTree::new(2);
        for p in &points {
            tree.insert(p.coords());
        }
        let queries = random_configs(2, 512, 29);
        b.iter(|| {
            let mut acc = 0usize;
            for q in &queries {
                acc += tree.nearest(q.coords());
            }
            black_box(acc)
        });
    });

    c.bench_function("edge_valid_cluttered", |b| {
        let pairs = random_configs(2, 128, 31);
        b.iter(|| {
            let mut valid = 0;
            for w in pairs.windows(2) {
                if edge_valid(&w[0], &w[1], &env) {
                    valid += 1;
                }
            }
            black_box(valid)
        });
    });

    c.bench_function("rrt_star_2000_nodes_uniform", |b| {
        let run = PlannerRun::new(
            env.clone(),
            flowplan::env::Config::new(vec![0.05, 0.05]),
            flowplan::env::Config::new(vec![0.95, 0.95]),
            2000,
            PlannerKind::RrtStar,
        );
        b.iter(|| {
            let mut sampler = Sampler::uniform(2, 37);
            black_box(plan(&run, &mut sampler))
        });
    });
}

criterion_group!(benches, planner_benches);
criterion_main!(benches);
