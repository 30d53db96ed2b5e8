//! Configuration samplers feeding the planners.
//!
//! The flow sampler draws latents in batches (redrawing on exhaustion, with
//! every redraw counted) and the mixture keeps an epsilon share of unbiased
//! uniform draws, which preserves the planner's probabilistic completeness.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::Config;
use crate::flow::{ConditionedFlow, ConditioningContext, FlowModel};
use crate::seed;

/// Default pre-drawn flow batch size.
pub const FLOW_BATCH_SIZE: usize = 10_000;
/// Default uniform share of the mixture sampler.
pub const DEFAULT_EPSILON: f64 = 0.1;

pub struct UniformSampler {
    dim: usize,
    rng: ChaCha8Rng,
}

impl UniformSampler {
    pub fn new(dim: usize, rng_seed: u64) -> Self {
        UniformSampler {
            dim,
            rng: seed::rng(rng_seed),
        }
    }

    pub fn next(&mut self) -> Config {
        Config::new((0..self.dim).map(|_| self.rng.gen::<f64>()).collect())
    }
}

/// Draws from a frozen conditioned flow in pre-drawn batches.
pub struct FlowSampler<'m> {
    flow: ConditionedFlow<'m>,
    batch_size: usize,
    batch: Vec<Config>,
    cursor: usize,
    fills: u64,
    rng: ChaCha8Rng,
}

impl<'m> FlowSampler<'m> {
    pub fn new(
        model: &'m FlowModel,
        ctx: &ConditioningContext,
        batch_size: usize,
        rng_seed: u64,
    ) -> Self {
        FlowSampler {
            flow: ConditionedFlow::new(model, ctx),
            batch_size,
            batch: Vec::new(),
            cursor: 0,
            fills: 0,
            rng: seed::rng(rng_seed),
        }
    }

    pub fn next(&mut self) -> Config {
        if self.cursor == self.batch.len() {
            self.batch = self.flow.sample_batch(self.batch_size, &mut self.rng);
            self.cursor = 0;
            self.fills += 1;
        }
        let q = self.batch[self.cursor].clone();
        self.cursor += 1;
        q
    }

    /// Batch refills beyond the initial draw.
    pub fn redraw_events(&self) -> u64 {
        self.fills.saturating_sub(1)
    }
}

/// Epsilon-greedy mixture: uniform with probability epsilon, flow otherwise.
pub struct MixtureSampler<'m> {
    epsilon: f64,
    coin: ChaCha8Rng,
    uniform: UniformSampler,
    flow: FlowSampler<'m>,
    uniform_draws: u64,
    flow_draws: u64,
}

impl<'m> MixtureSampler<'m> {
    pub fn new(
        model: &'m FlowModel,
        ctx: &ConditioningContext,
        epsilon: f64,
        batch_size: usize,
        rng_seed: u64,
    ) -> Self {
        assert!((0.0..=1.0).contains(&epsilon), "epsilon outside [0,1]");
        MixtureSampler {
            epsilon,
            coin: seed::rng(seed::derive(rng_seed, "mixture-coin")),
            uniform: UniformSampler::new(model.dim(), seed::derive(rng_seed, "mixture-uniform")),
            flow: FlowSampler::new(model, ctx, batch_size, seed::derive(rng_seed, "mixture-flow")),
            uniform_draws: 0,
            flow_draws: 0,
        }
    }

    pub fn next(&mut self) -> Config {
        if self.coin.gen::<f64>() < self.epsilon {
            self.uniform_draws += 1;
            self.uniform.next()
        } else {
            self.flow_draws += 1;
            self.flow.next()
        }
    }
}

/// The proposal distribution of a planner run.
pub enum Sampler<'m> {
    Uniform(UniformSampler),
    Flow(FlowSampler<'m>),
    Mixture(MixtureSampler<'m>),
}

impl<'m> Sampler<'m> {
    pub fn uniform(dim: usize, rng_seed: u64) -> Self {
        Sampler::Uniform(UniformSampler::new(dim, rng_seed))
    }

    pub fn flow(model: &'m FlowModel, ctx: &ConditioningContext, rng_seed: u64) -> Self {
        Sampler::Flow(FlowSampler::new(model, ctx, FLOW_BATCH_SIZE, rng_seed))
    }

    pub fn mixture(
        model: &'m FlowModel,
        ctx: &ConditioningContext,
        epsilon: f64,
        rng_seed: u64,
    ) -> Self {
        Sampler::Mixture(MixtureSampler::new(
            model,
            ctx,
            epsilon,
            FLOW_BATCH_SIZE,
            rng_seed,
        ))
    }

    pub fn next(&mut self) -> Config {
        match self {
            Sampler::Uniform(s) => s.next(),
            Sampler::Flow(s) => s.next(),
            Sampler::Mixture(s) => s.next(),
        }
    }

    /// Uniform-branch draw count (mixture only).
    pub fn uniform_branch_draws(&self) -> u64 {
        match self {
            Sampler::Mixture(s) => s.uniform_draws,
            _ => 0,
        }
    }

    /// Flow-branch draw count (mixture only).
    pub fn flow_branch_draws(&self) -> u64 {
        match self {
            Sampler::Mixture(s) => s.flow_draws,
            _ => 0,
        }
    }

    /// Flow batch redraw events.
    pub fn flow_redraws(&self) -> u64 {
        match self {
            Sampler::Flow(s) => s.redraw_events(),
            Sampler::Mixture(s) => s.flow.redraw_events(),
            Sampler::Uniform(_) => 0,
        }
    }
}

/// The prolate hyperspheroid of configurations that could still improve the
/// current best solution: points whose summed distance to both foci does not
/// exceed the best cost.
#[derive(Debug, Clone)]
pub struct InformedSet {
    init: Vec<f64>,
    target: Vec<f64>,
    pub best_cost: f64,
}

impl InformedSet {
    pub fn new(q_init: &Config, q_target: &Config, best_cost: f64) -> Self {
        InformedSet {
            init: q_init.coords().to_vec(),
            target: q_target.coords().to_vec(),
            best_cost,
        }
    }

    #[inline]
    pub fn contains(&self, q: &Config) -> bool {
        crate::env::dist(q.coords(), &self.init) + crate::env::dist(q.coords(), &self.target)
            <= self.best_cost
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowLayout;
    use crate::stats::{ks_p_value, ks_statistic_uniform};

    fn test_model(dim: usize) -> FlowModel {
        FlowModel::new(
            FlowLayout {
                dim,
                blocks: 2,
                hidden: vec![4],
                ctx_len: 2 + 2 * dim + 2,
                scale_clamp: 2.0,
                boundary_eps: 1e-4,
            },
            0,
        )
    }

    fn test_ctx() -> ConditioningContext {
        ConditioningContext::with_raw_omega(vec![0.3, 0.6], None, None)
    }

    /// Degenerate mixture (epsilon = 1) is statistically uniform.
    #[test]
    fn mixture_epsilon_one_is_uniform() {
        let model = test_model(2);
        let ctx = test_ctx();
        let mut sampler = Sampler::mixture(&model, &ctx, 1.0, 42);
        let n = 10_000;
        let mut per_coord = vec![Vec::with_capacity(n); 2];
        for _ in 0..n {
            let q = sampler.next();
            per_coord[0].push(q[0]);
            per_coord[1].push(q[1]);
        }
        for coord in &per_coord {
            let d = ks_statistic_uniform(coord);
            assert!(ks_p_value(d, n) > 0.01, "KS rejected uniformity");
        }
        assert_eq!(sampler.flow_branch_draws(), 0);
    }

    /// Paper protocol: epsilon = 0.1 gives a 10% +- 1% uniform share.
    #[test]
    fn mixture_epsilon_calibration() {
        let model = test_model(2);
        let ctx = test_ctx();
        let mut sampler = Sampler::mixture(&model, &ctx, 0.1, 7);
        let n = 100_000u64;
        for _ in 0..n {
            sampler.next();
        }
        let frac = sampler.uniform_branch_draws() as f64 / n as f64;
        assert!((frac - 0.10).abs() <= 0.01, "uniform share {frac}");
        assert_eq!(sampler.uniform_branch_draws() + sampler.flow_branch_draws(), n);
    }

    /// One past the batch size triggers exactly one redraw event.
    #[test]
    fn flow_batch_redraw_accounting() {
        let model = test_model(2);
        let ctx = test_ctx();
        let mut sampler = FlowSampler::new(&model, &ctx, 10_000, 5);
        for _ in 0..10_000 {
            sampler.next();
        }
        assert_eq!(sampler.redraw_events(), 0);
        sampler.next();
        assert_eq!(sampler.redraw_events(), 1);
    }

    #[test]
    fn uniform_sampler_is_seed_deterministic() {
        let mut a = UniformSampler::new(3, 9);
        let mut b = UniformSampler::new(3, 9);
        for _ in 0..10 {
            assert_eq!(a.next(), b.next());
        }
    }

    #[test]
    fn informed_set_membership() {
        let init = Config::new(vec![0.2, 0.2]);
        let target = Config::new(vec![0.8, 0.8]);
        let direct = init.dist(&target);
        let set = InformedSet::new(&init, &target, direct * 1.1);
        assert!(set.contains(&Config::new(vec![0.5, 0.5])));
        assert!(!set.contains(&Config::new(vec![0.0, 1.0])));
    }
}
