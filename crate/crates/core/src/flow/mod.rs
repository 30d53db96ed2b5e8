//! Conditional normalizing flow over the unit-cube C-space.
//!
//! The model is a logit pre-transform onto R^D followed by a stack of
//! conditional affine coupling blocks with a fixed alternating-halves
//! permutation between blocks. The base density is a standard Gaussian, so
//! both exact log-densities and inverse-direction sampling are cheap. Scale
//! outputs are soft-clamped, which bounds every block's log-determinant and
//! keeps the exponentials safe.
//!
//! Conditioning is a flat vector `[omega, q_init * m_i, m_i, q_target * m_t,
//! m_t]`; absent endpoints are replaced by a sentinel with a zero mask flag,
//! which is how partial planning information (unknown start or goal) is fed
//! to the same trained network.

mod checkpoint;
pub mod grad;

pub use checkpoint::CheckpointMeta;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{Config, RobotKind, WorkspaceEncoding, ENCODING_SENTINEL};
use crate::error::{Error, Result};
use crate::mlp::{CtxCache, DenseNet, NetShape};
use crate::seed;

/// ln(2*pi), the Gaussian normalization constant per dimension.
pub const LN_TWO_PI: f64 = 1.8378770664093453;

/// Architecture description of a flow model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowLayout {
    /// C-space dimensionality D.
    pub dim: usize,
    /// Number of coupling blocks K.
    pub blocks: usize,
    /// Hidden layer widths of every conditioner network.
    pub hidden: Vec<usize>,
    /// Flattened conditioning vector length.
    pub ctx_len: usize,
    /// Soft clamp amplitude for scale outputs.
    pub scale_clamp: f64,
    /// Boundary epsilon of the logit pre-transform.
    pub boundary_eps: f64,
}

impl FlowLayout {
    /// Production layout for a robot kind: K = 8 blocks, 2 x 64 tanh
    /// conditioners, conditioned on the 64-point workspace cloud plus both
    /// endpoints and their mask flags.
    pub fn standard(robot: RobotKind) -> Self {
        let dim = robot.dim();
        FlowLayout {
            dim,
            blocks: 8,
            hidden: vec![64, 64],
            ctx_len: 2 * crate::env::ENCODING_POINTS + 2 * dim + 2,
            scale_clamp: 2.0,
            boundary_eps: 1e-4,
        }
    }

    /// First-half size of the coupling split (ceil(D/2)).
    pub fn split(&self) -> usize {
        (self.dim + 1) / 2
    }

    fn shape_a(&self) -> NetShape {
        // s_a / t_a read part b plus the context and emit part a.
        let d_a = self.split();
        let d_b = self.dim - d_a;
        let mut sizes = vec![d_b + self.ctx_len];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(d_a);
        NetShape::new(sizes)
    }

    fn shape_b(&self) -> NetShape {
        let d_a = self.split();
        let d_b = self.dim - d_a;
        let mut sizes = vec![d_a + self.ctx_len];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(d_b);
        NetShape::new(sizes)
    }
}

/// Planning information a flow density is conditioned on.
///
/// Endpoints may be absent; the flattened form then carries the sentinel
/// value with the corresponding mask flag cleared.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningContext {
    omega: Vec<f64>,
    pub q_init: Option<Config>,
    pub q_target: Option<Config>,
}

impl ConditioningContext {
    pub fn new(
        encoding: &WorkspaceEncoding,
        q_init: Option<Config>,
        q_target: Option<Config>,
    ) -> Self {
        ConditioningContext {
            omega: encoding.flat().to_vec(),
            q_init,
            q_target,
        }
    }

    /// Context over a raw omega vector; used by small test fixtures.
    pub fn with_raw_omega(omega: Vec<f64>, q_init: Option<Config>, q_target: Option<Config>) -> Self {
        ConditioningContext {
            omega,
            q_init,
            q_target,
        }
    }

    pub fn flat_len(&self, dim: usize) -> usize {
        self.omega.len() + 2 * dim + 2
    }

    /// Flatten to `[omega, q_init * m, m, q_target * m, m]`.
    pub fn flatten(&self, dim: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len(dim));
        out.extend_from_slice(&self.omega);
        for endpoint in [&self.q_init, &self.q_target] {
            match endpoint {
                Some(q) => {
                    assert_eq!(q.dim(), dim, "endpoint dimension mismatch");
                    out.extend_from_slice(q.coords());
                    out.push(1.0);
                }
                None => {
                    out.extend(std::iter::repeat(ENCODING_SENTINEL).take(dim));
                    out.push(0.0);
                }
            }
        }
        out
    }

    /// Copy with the chosen endpoints masked out.
    pub fn masked(&self, mask_init: bool, mask_target: bool) -> Self {
        ConditioningContext {
            omega: self.omega.clone(),
            q_init: if mask_init { None } else { self.q_init.clone() },
            q_target: if mask_target { None } else { self.q_target.clone() },
        }
    }
}

/// Soft clamp applied to raw scale outputs: `alpha * tanh(s / alpha)`.
#[inline]
pub fn clamp_scale(s: f64, alpha: f64) -> f64 {
    alpha * (s / alpha).tanh()
}

/// One affine coupling block owning its four conditioner networks.
///
/// Part a is updated from part b first, then part b from the fresh part a;
/// both updates are elementwise affine maps, so the Jacobian is triangular
/// and its log-determinant is the sum of the clamped scale outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock {
    pub split: usize,
    pub scale_clamp: f64,
    pub s_a: DenseNet,
    pub t_a: DenseNet,
    pub s_b: DenseNet,
    pub t_b: DenseNet,
}

impl CouplingBlock {
    fn as_ref(&self) -> BlockRef<'_> {
        BlockRef {
            d_a: self.split,
            alpha: self.scale_clamp,
            shape_a: &self.s_a.shape,
            shape_b: &self.s_b.shape,
            s_a: &self.s_a.params,
            t_a: &self.t_a.params,
            s_b: &self.s_b.params,
            t_b: &self.t_b.params,
        }
    }

    /// Forward coupling; returns the transformed vector and the block's
    /// log-determinant contribution.
    pub fn forward(&self, z: &[f64], ctx: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (out, logdet) = block_forward(&self.as_ref(), z, ctx);
        if out.iter().all(|v| v.is_finite()) && logdet.is_finite() {
            Ok((out, logdet))
        } else {
            Err(Error::Divergence("non-finite coupling output".into()))
        }
    }

    /// Exact algebraic inverse; the log-determinant is negated.
    pub fn inverse(&self, z_next: &[f64], ctx: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (out, logdet) = block_inverse(&self.as_ref(), z_next, ctx);
        if out.iter().all(|v| v.is_finite()) && logdet.is_finite() {
            Ok((out, logdet))
        } else {
            Err(Error::Divergence("non-finite coupling output".into()))
        }
    }
}

/// Borrowed view of one block inside a flat parameter vector.
pub(crate) struct BlockRef<'a> {
    pub d_a: usize,
    pub alpha: f64,
    pub shape_a: &'a NetShape,
    pub shape_b: &'a NetShape,
    pub s_a: &'a [f64],
    pub t_a: &'a [f64],
    pub s_b: &'a [f64],
    pub t_b: &'a [f64],
}

fn concat(half: &[f64], ctx: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(half.len() + ctx.len());
    v.extend_from_slice(half);
    v.extend_from_slice(ctx);
    v
}

pub(crate) fn block_forward(block: &BlockRef<'_>, z: &[f64], ctx: &[f64]) -> (Vec<f64>, f64) {
    let (za, zb) = z.split_at(block.d_a);
    let in_b = concat(zb, ctx);
    let sa: Vec<f64> = block
        .shape_a
        .forward(block.s_a, &in_b)
        .iter()
        .map(|s| clamp_scale(*s, block.alpha))
        .collect();
    let ta = block.shape_a.forward(block.t_a, &in_b);
    let za_new: Vec<f64> = za
        .iter()
        .zip(sa.iter().zip(&ta))
        .map(|(z, (s, t))| z * s.exp() + t)
        .collect();

    let in_a = concat(&za_new, ctx);
    let sb: Vec<f64> = block
        .shape_b
        .forward(block.s_b, &in_a)
        .iter()
        .map(|s| clamp_scale(*s, block.alpha))
        .collect();
    let tb = block.shape_b.forward(block.t_b, &in_a);
    let zb_new: Vec<f64> = zb
        .iter()
        .zip(sb.iter().zip(&tb))
        .map(|(z, (s, t))| z * s.exp() + t)
        .collect();

    let logdet = sa.iter().sum::<f64>() + sb.iter().sum::<f64>();
    let mut out = za_new;
    out.extend_from_slice(&zb_new);
    (out, logdet)
}

pub(crate) fn block_inverse(block: &BlockRef<'_>, z_next: &[f64], ctx: &[f64]) -> (Vec<f64>, f64) {
    let (za_new, zb_new) = z_next.split_at(block.d_a);
    let in_a = concat(za_new, ctx);
    let sb: Vec<f64> = block
        .shape_b
        .forward(block.s_b, &in_a)
        .iter()
        .map(|s| clamp_scale(*s, block.alpha))
        .collect();
    let tb = block.shape_b.forward(block.t_b, &in_a);
    let zb: Vec<f64> = zb_new
        .iter()
        .zip(sb.iter().zip(&tb))
        .map(|(z, (s, t))| (z - t) * (-s).exp())
        .collect();

    let in_b = concat(&zb, ctx);
    let sa: Vec<f64> = block
        .shape_a
        .forward(block.s_a, &in_b)
        .iter()
        .map(|s| clamp_scale(*s, block.alpha))
        .collect();
    let ta = block.shape_a.forward(block.t_a, &in_b);
    let za: Vec<f64> = za_new
        .iter()
        .zip(sa.iter().zip(&ta))
        .map(|(z, (s, t))| (z - t) * (-s).exp())
        .collect();

    let logdet = -(sa.iter().sum::<f64>() + sb.iter().sum::<f64>());
    let mut out = za;
    out.extend_from_slice(&zb);
    (out, logdet)
}

/// Indices of the four conditioner networks within a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum NetRole {
    ScaleA = 0,
    TransA = 1,
    ScaleB = 2,
    TransB = 3,
}

/// The conditional normalizing flow: bijection between the open unit cube
/// and R^D with exact conditional log-density.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    layout: FlowLayout,
    shape_a: NetShape,
    shape_b: NetShape,
    params: Vec<f64>,
    pub meta: CheckpointMeta,
}

impl FlowModel {
    /// Identity-initialized model: hidden layers are seeded Xavier draws,
    /// every conditioner output layer is zero, so the composed map starts
    /// as logit followed by the identity.
    pub fn new(layout: FlowLayout, init_seed: u64) -> Self {
        assert!(layout.blocks >= 1, "a flow needs at least one block");
        assert!(layout.dim >= 2, "flow dimensionality must be at least 2");
        let shape_a = layout.shape_a();
        let shape_b = layout.shape_b();
        let mut params = Vec::new();
        for block in 0..layout.blocks {
            for role in 0..4u64 {
                let shape = if role < 2 { &shape_a } else { &shape_b };
                let mut rng = seed::rng(seed::derive_n(init_seed, "flow-init", &[block as u64, role]));
                params.extend(shape.init_params(&mut rng));
            }
        }
        FlowModel {
            layout,
            shape_a,
            shape_b,
            params,
            meta: CheckpointMeta::default(),
        }
    }

    pub fn layout(&self) -> &FlowLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn shapes(&self) -> (&NetShape, &NetShape) {
        (&self.shape_a, &self.shape_b)
    }

    fn block_stride(&self) -> usize {
        2 * self.shape_a.param_count() + 2 * self.shape_b.param_count()
    }

    /// Parameter range of one conditioner network.
    pub(crate) fn net_range(&self, block: usize, role: NetRole) -> std::ops::Range<usize> {
        let a = self.shape_a.param_count();
        let b = self.shape_b.param_count();
        let start = block * self.block_stride()
            + match role {
                NetRole::ScaleA => 0,
                NetRole::TransA => a,
                NetRole::ScaleB => 2 * a,
                NetRole::TransB => 2 * a + b,
            };
        let len = match role {
            NetRole::ScaleA | NetRole::TransA => a,
            NetRole::ScaleB | NetRole::TransB => b,
        };
        start..start + len
    }

    pub(crate) fn block_ref(&self, block: usize) -> BlockRef<'_> {
        BlockRef {
            d_a: self.layout.split(),
            alpha: self.layout.scale_clamp,
            shape_a: &self.shape_a,
            shape_b: &self.shape_b,
            s_a: &self.params[self.net_range(block, NetRole::ScaleA)],
            t_a: &self.params[self.net_range(block, NetRole::TransA)],
            s_b: &self.params[self.net_range(block, NetRole::ScaleB)],
            t_b: &self.params[self.net_range(block, NetRole::TransB)],
        }
    }

    /// True when every conditioner output layer is still all-zero.
    pub fn is_identity_init(&self) -> bool {
        (0..self.layout.blocks).all(|k| {
            [NetRole::ScaleA, NetRole::TransA, NetRole::ScaleB, NetRole::TransB]
                .into_iter()
                .all(|role| {
                    let range = self.net_range(k, role);
                    let shape = if matches!(role, NetRole::ScaleA | NetRole::TransA) {
                        &self.shape_a
                    } else {
                        &self.shape_b
                    };
                    let sizes = shape.sizes();
                    let out_params =
                        (sizes[sizes.len() - 2] + 1) * sizes[sizes.len() - 1];
                    self.params[range.end - out_params..range.end]
                        .iter()
                        .all(|p| *p == 0.0)
                })
        })
    }

    /// Latent-side forward map: runs all blocks (with the alternating-halves
    /// permutation between them) and accumulates the log-determinant.
    pub fn forward_latent(&self, x: &[f64], ctx_flat: &[f64]) -> (Vec<f64>, f64) {
        assert_eq!(x.len(), self.layout.dim);
        assert_eq!(ctx_flat.len(), self.layout.ctx_len, "context length mismatch");
        let d_a = self.layout.split();
        let mut z = x.to_vec();
        let mut logdet = 0.0;
        for k in 0..self.layout.blocks {
            let (next, ld) = block_forward(&self.block_ref(k), &z, ctx_flat);
            z = next;
            logdet += ld;
            if k + 1 < self.layout.blocks {
                z.rotate_left(d_a);
            }
        }
        (z, logdet)
    }

    /// Exact inverse of [`Self::forward_latent`].
    pub fn inverse_latent(&self, z: &[f64], ctx_flat: &[f64]) -> (Vec<f64>, f64) {
        assert_eq!(z.len(), self.layout.dim);
        let d_a = self.layout.split();
        let mut x = z.to_vec();
        let mut logdet = 0.0;
        for k in (0..self.layout.blocks).rev() {
            if k + 1 < self.layout.blocks {
                x.rotate_right(d_a);
            }
            let (prev, ld) = block_inverse(&self.block_ref(k), &x, ctx_flat);
            x = prev;
            logdet += ld;
        }
        (x, logdet)
    }

    /// Logit pre-transform of a clamped configuration, with its log-det.
    pub fn logit_transform(&self, q: &[f64]) -> (Vec<f64>, f64) {
        let eps = self.layout.boundary_eps;
        let mut logdet = 0.0;
        let y: Vec<f64> = q
            .iter()
            .map(|c| {
                let x = c.clamp(eps, 1.0 - eps);
                logdet += -(x * (1.0 - x)).ln();
                (x / (1.0 - x)).ln()
            })
            .collect();
        (y, logdet)
    }

    /// Exact conditional log-density of a configuration.
    pub fn log_prob(&self, q: &Config, ctx: &ConditioningContext) -> f64 {
        assert_eq!(q.dim(), self.layout.dim, "configuration dimension mismatch");
        let ctx_flat = ctx.flatten(self.layout.dim);
        self.log_prob_flat(q.coords(), &ctx_flat)
    }

    pub(crate) fn log_prob_flat(&self, q: &[f64], ctx_flat: &[f64]) -> f64 {
        let (y, logdet_t) = self.logit_transform(q);
        let (z, logdet_blocks) = self.forward_latent(&y, ctx_flat);
        let sq_norm: f64 = z.iter().map(|v| v * v).sum();
        let log_normal = -0.5 * (self.layout.dim as f64) * LN_TWO_PI - 0.5 * sq_norm;
        log_normal + logdet_blocks + logdet_t
    }

    /// Map a latent vector to a configuration (inverse flow plus sigmoid).
    pub fn latent_to_config(&self, z: &[f64], ctx_flat: &[f64]) -> Config {
        let (x, _) = self.inverse_latent(z, ctx_flat);
        Config::new(x.iter().map(|v| sigmoid(*v)).collect())
    }

    /// Draw `n` configurations, deterministically per seed. Every output
    /// lies strictly inside the open unit cube.
    pub fn sample(&self, ctx: &ConditioningContext, n: usize, rng_seed: u64) -> Vec<Config> {
        let conditioned = ConditionedFlow::new(self, ctx);
        let mut rng = seed::rng(rng_seed);
        conditioned.sample_batch(n, &mut rng)
    }

    /// Finite-difference log-determinant of the full map q -> z, used to
    /// validate the analytic sum (test oracle, D <= 4).
    pub fn logdet_numeric_check(&self, q: &Config, ctx: &ConditioningContext) -> f64 {
        assert!(self.layout.dim <= 4, "numeric Jacobian check is for small D");
        let d = self.layout.dim;
        let ctx_flat = ctx.flatten(d);
        let f = |coords: &[f64]| -> Vec<f64> {
            let (y, _) = self.logit_transform(coords);
            self.forward_latent(&y, &ctx_flat).0
        };
        let h = 1e-5;
        let mut jac = vec![0.0; d * d];
        let mut probe = q.coords().to_vec();
        for j in 0..d {
            let orig = probe[j];
            probe[j] = orig + h;
            let hi = f(&probe);
            probe[j] = orig - h;
            let lo = f(&probe);
            probe[j] = orig;
            for i in 0..d {
                jac[i * d + j] = (hi[i] - lo[i]) / (2.0 * h);
            }
        }
        log_abs_det(&mut jac, d)
    }
}

/// log|det| of a small row-major matrix via Gaussian elimination with
/// partial pivoting. The matrix is consumed.
fn log_abs_det(m: &mut [f64], n: usize) -> f64 {
    let mut logdet = 0.0;
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&a, &b| m[a * n + col].abs().partial_cmp(&m[b * n + col].abs()).unwrap())
            .unwrap();
        if pivot_row != col {
            for j in 0..n {
                m.swap(col * n + j, pivot_row * n + j);
            }
        }
        let pivot = m[col * n + col];
        logdet += pivot.abs().ln();
        for row in col + 1..n {
            let factor = m[row * n + col] / pivot;
            for j in col..n {
                m[row * n + j] -= factor * m[col * n + j];
            }
        }
    }
    logdet
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    // Clamped so extreme latents still land strictly inside (0,1).
    let x = x.clamp(-36.0, 36.0);
    1.0 / (1.0 + (-x).exp())
}

/// A flow model frozen against one conditioning context.
///
/// The context part of every conditioner's first layer is precomputed, which
/// makes repeated density evaluations and batched sampling several times
/// cheaper. This is the path the planner and the quadrature tests use.
pub struct ConditionedFlow<'a> {
    model: &'a FlowModel,
    caches: Vec<CtxCache>,
}

impl<'a> ConditionedFlow<'a> {
    pub fn new(model: &'a FlowModel, ctx: &ConditioningContext) -> Self {
        let ctx_flat = ctx.flatten(model.layout.dim);
        Self::with_flat_ctx(model, &ctx_flat)
    }

    pub fn with_flat_ctx(model: &'a FlowModel, ctx_flat: &[f64]) -> Self {
        assert_eq!(ctx_flat.len(), model.layout.ctx_len, "context length mismatch");
        let mut caches = Vec::with_capacity(model.layout.blocks * 4);
        for k in 0..model.layout.blocks {
            for role in [NetRole::ScaleA, NetRole::TransA, NetRole::ScaleB, NetRole::TransB] {
                let shape = if matches!(role, NetRole::ScaleA | NetRole::TransA) {
                    &model.shape_a
                } else {
                    &model.shape_b
                };
                let params = &model.params[model.net_range(k, role)];
                caches.push(shape.ctx_cache(params, ctx_flat));
            }
        }
        ConditionedFlow { model, caches }
    }

    fn net(&self, block: usize, role: NetRole, lead: &[f64]) -> Vec<f64> {
        let shape = if matches!(role, NetRole::ScaleA | NetRole::TransA) {
            &self.model.shape_a
        } else {
            &self.model.shape_b
        };
        let params = &self.model.params[self.model.net_range(block, role)];
        shape.forward_cached(params, lead, &self.caches[block * 4 + role as usize])
    }

    fn block_forward_cached(&self, block: usize, z: &[f64]) -> (Vec<f64>, f64) {
        let alpha = self.model.layout.scale_clamp;
        let (za, zb) = z.split_at(self.model.layout.split());
        let sa: Vec<f64> = self
            .net(block, NetRole::ScaleA, zb)
            .iter()
            .map(|s| clamp_scale(*s, alpha))
            .collect();
        let ta = self.net(block, NetRole::TransA, zb);
        let za_new: Vec<f64> = za
            .iter()
            .zip(sa.iter().zip(&ta))
            .map(|(z, (s, t))| z * s.exp() + t)
            .collect();
        let sb: Vec<f64> = self
            .net(block, NetRole::ScaleB, &za_new)
            .iter()
            .map(|s| clamp_scale(*s, alpha))
            .collect();
        let tb = self.net(block, NetRole::TransB, &za_new);
        let zb_new: Vec<f64> = zb
            .iter()
            .zip(sb.iter().zip(&tb))
            .map(|(z, (s, t))| z * s.exp() + t)
            .collect();
        let logdet = sa.iter().sum::<f64>() + sb.iter().sum::<f64>();
        let mut out = za_new;
        out.extend_from_slice(&zb_new);
        (out, logdet)
    }


    /// Log-density of one configuration under the frozen context.
    pub fn log_prob(&self, q: &[f64]) -> f64 {
        let (y, logdet_t) = self.model.logit_transform(q);
        let d_a = self.model.layout.split();
        let mut z = y;
        let mut logdet = logdet_t;
        for k in 0..self.model.layout.blocks {
            let (next, ld) = self.block_forward_cached(k, &z);
            z = next;
            logdet += ld;
            if k + 1 < self.model.layout.blocks {
                z.rotate_left(d_a);
            }
        }
        let sq_norm: f64 = z.iter().map(|v| v * v).sum();
        -0.5 * (self.model.layout.dim as f64) * LN_TWO_PI - 0.5 * sq_norm + logdet
    }

    /// Draw a batch of configurations from the conditioned density. Chunks
    /// of latents flow through one conditioner at a time, which keeps every
    /// weight matrix cache-resident across the chunk.
    pub fn sample_batch(&self, n: usize, rng: &mut impl Rng) -> Vec<Config> {
        let d = self.model.layout.dim;
        let d_a = self.model.layout.split();
        let blocks = self.model.layout.blocks;
        let mut out = Vec::with_capacity(n);
        let mut start = 0usize;
        while start < n {
            let rows = (n - start).min(BATCH_CHUNK);
            let mut z = vec![0.0; rows * d];
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            for k in (0..blocks).rev() {
                if k + 1 < blocks {
                    for row in z.chunks_exact_mut(d) {
                        row.rotate_right(d_a);
                    }
                }
                z = self.block_inverse_batch(k, &z, rows);
            }
            for row in z.chunks_exact(d) {
                out.push(Config::new(row.iter().map(|v| sigmoid(*v)).collect()));
            }
            start += rows;
        }
        out
    }

    /// Conditioned log-densities of a batch of configurations.
    pub fn log_prob_batch(&self, qs: &[Config]) -> Vec<f64> {
        let d = self.model.layout.dim;
        let d_a = self.model.layout.split();
        let blocks = self.model.layout.blocks;
        let mut out = Vec::with_capacity(qs.len());
        for chunk in qs.chunks(BATCH_CHUNK) {
            let rows = chunk.len();
            let mut z = vec![0.0; rows * d];
            let mut logdet = vec![0.0; rows];
            for (r, q) in chunk.iter().enumerate() {
                let (y, ld) = self.model.logit_transform(q.coords());
                z[r * d..(r + 1) * d].copy_from_slice(&y);
                logdet[r] = ld;
            }
            for k in 0..blocks {
                z = self.block_forward_batch(k, &z, rows, &mut logdet);
                if k + 1 < blocks {
                    for row in z.chunks_exact_mut(d) {
                        row.rotate_left(d_a);
                    }
                }
            }
            for r in 0..rows {
                let sq: f64 = z[r * d..(r + 1) * d].iter().map(|v| v * v).sum();
                out.push(-0.5 * (d as f64) * LN_TWO_PI - 0.5 * sq + logdet[r]);
            }
        }
        out
    }

    fn net_batch(&self, block: usize, role: NetRole, lead: &[f64], rows: usize) -> Vec<f64> {
        let shape = if matches!(role, NetRole::ScaleA | NetRole::TransA) {
            &self.model.shape_a
        } else {
            &self.model.shape_b
        };
        let params = &self.model.params[self.model.net_range(block, role)];
        shape.forward_cached_batch(params, lead, rows, &self.caches[block * 4 + role as usize])
    }

    fn block_inverse_batch(&self, block: usize, z_next: &[f64], rows: usize) -> Vec<f64> {
        let d = self.model.layout.dim;
        let d_a = self.model.layout.split();
        let d_b = d - d_a;
        let alpha = self.model.layout.scale_clamp;
        let mut za_new = vec![0.0; rows * d_a];
        let mut zb_new = vec![0.0; rows * d_b];
        for r in 0..rows {
            za_new[r * d_a..(r + 1) * d_a].copy_from_slice(&z_next[r * d..r * d + d_a]);
            zb_new[r * d_b..(r + 1) * d_b].copy_from_slice(&z_next[r * d + d_a..(r + 1) * d]);
        }
        let sb = self.net_batch(block, NetRole::ScaleB, &za_new, rows);
        let tb = self.net_batch(block, NetRole::TransB, &za_new, rows);
        let mut zb = vec![0.0; rows * d_b];
        for i in 0..rows * d_b {
            zb[i] = (zb_new[i] - tb[i]) * (-clamp_scale(sb[i], alpha)).exp();
        }
        let sa = self.net_batch(block, NetRole::ScaleA, &zb, rows);
        let ta = self.net_batch(block, NetRole::TransA, &zb, rows);
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            for i in 0..d_a {
                let idx = r * d_a + i;
                out[r * d + i] = (za_new[idx] - ta[idx]) * (-clamp_scale(sa[idx], alpha)).exp();
            }
            out[r * d + d_a..(r + 1) * d].copy_from_slice(&zb[r * d_b..(r + 1) * d_b]);
        }
        out
    }

    fn block_forward_batch(
        &self,
        block: usize,
        z: &[f64],
        rows: usize,
        logdet: &mut [f64],
    ) -> Vec<f64> {
        let d = self.model.layout.dim;
        let d_a = self.model.layout.split();
        let d_b = d - d_a;
        let alpha = self.model.layout.scale_clamp;
        let mut za = vec![0.0; rows * d_a];
        let mut zb = vec![0.0; rows * d_b];
        for r in 0..rows {
            za[r * d_a..(r + 1) * d_a].copy_from_slice(&z[r * d..r * d + d_a]);
            zb[r * d_b..(r + 1) * d_b].copy_from_slice(&z[r * d + d_a..(r + 1) * d]);
        }
        let sa = self.net_batch(block, NetRole::ScaleA, &zb, rows);
        let ta = self.net_batch(block, NetRole::TransA, &zb, rows);
        let mut za_new = vec![0.0; rows * d_a];
        for r in 0..rows {
            for i in 0..d_a {
                let idx = r * d_a + i;
                let s = clamp_scale(sa[idx], alpha);
                za_new[idx] = za[idx] * s.exp() + ta[idx];
                logdet[r] += s;
            }
        }
        let sb = self.net_batch(block, NetRole::ScaleB, &za_new, rows);
        let tb = self.net_batch(block, NetRole::TransB, &za_new, rows);
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            for i in 0..d_a {
                out[r * d + i] = za_new[r * d_a + i];
            }
            for i in 0..d_b {
                let idx = r * d_b + i;
                let s = clamp_scale(sb[idx], alpha);
                out[r * d + d_a + i] = zb[idx] * s.exp() + tb[idx];
                logdet[r] += s;
            }
        }
        out
    }
}

/// Row chunk size for batched conditioned evaluation.
const BATCH_CHUNK: usize = 512;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Config;

    fn tiny_layout(dim: usize, ctx_len: usize) -> FlowLayout {
        FlowLayout {
            dim,
            blocks: 3,
            hidden: vec![8],
            ctx_len,
            scale_clamp: 2.0,
            boundary_eps: 1e-4,
        }
    }

    fn raw_ctx(len: usize) -> ConditioningContext {
        let omega: Vec<f64> = (0..len).map(|i| 0.1 * (i as f64 + 1.0)).collect();
        ConditioningContext::with_raw_omega(omega, None, None)
    }

    fn randomize(model: &mut FlowModel, seed: u64, scale: f64) {
        use rand::Rng;
        let mut rng = seed::rng(seed);
        for p in model.params_mut() {
            *p = (rng.gen::<f64>() - 0.5) * scale;
        }
    }

    #[test]
    fn identity_init_is_identity_with_zero_logdet() {
        let layout = tiny_layout(2, 9); // omega 3 + 2*2 + 2
        let model = FlowModel::new(layout, 0);
        assert!(model.is_identity_init());
        let ctx = raw_ctx(3).flatten(2);
        let x = [0.3, -1.7];
        let (z, logdet) = model.forward_latent(&x, &ctx);
        assert_eq!(z, x.to_vec());
        assert_eq!(logdet, 0.0);
    }

    /// Hand evaluation of the two coupling updates with forced constant
    /// conditioners: s_a = ln 2, t_a = 0.5, s_b = 0, t_b = -1 on z = (1, 2)
    /// gives (2.5, 1.0) with log-determinant ln 2.
    #[test]
    fn coupling_hand_example() {
        let ctx_len = 3;
        let mk = |bias: f64| {
            let mut net = DenseNet::zeros(vec![1 + ctx_len, 1]);
            let n = net.params.len();
            net.params[n - 1] = bias;
            net
        };
        let alpha = 2.0f64;
        // Output passes through the soft clamp, so pick the preimage of ln 2.
        let raw_for_ln2 = alpha * (std::f64::consts::LN_2 / alpha).atanh();
        let block = CouplingBlock {
            split: 1,
            scale_clamp: alpha,
            s_a: mk(raw_for_ln2),
            t_a: mk(0.5),
            s_b: mk(0.0),
            t_b: mk(-1.0),
        };
        let ctx = [0.2, 0.4, 0.6];
        let (out, logdet) = block.forward(&[1.0, 2.0], &ctx).unwrap();
        assert!((out[0] - 2.5).abs() < 1e-9, "{out:?}");
        assert!((out[1] - 1.0).abs() < 1e-9, "{out:?}");
        assert!((logdet - std::f64::consts::LN_2).abs() < 1e-6);

        let (back, inv_logdet) = block.inverse(&out, &ctx).unwrap();
        assert!((back[0] - 1.0).abs() < 1e-12);
        assert!((back[1] - 2.0).abs() < 1e-12);
        assert!((inv_logdet + logdet).abs() < 1e-12);
    }

    #[test]
    fn identity_block_round_trip() {
        let layout = tiny_layout(2, 9);
        let model = FlowModel::new(layout, 1);
        let ctx = raw_ctx(3).flatten(2);
        let block = model.block_ref(0);
        let (out, logdet) = block_forward(&block, &[0.5, -0.25], &ctx);
        assert_eq!(out, vec![0.5, -0.25]);
        assert_eq!(logdet, 0.0);
    }

    /// Random round-trip harness over a thousand inputs.
    #[test]
    fn random_round_trips() {
        use rand::Rng;
        for (dim, omega) in [(2usize, 4usize), (3, 4), (4, 6)] {
            let ctx_len = omega + 2 * dim + 2;
            let mut model = FlowModel::new(tiny_layout(dim, ctx_len), 2);
            randomize(&mut model, 77 + dim as u64, 1.0);
            let ctx = raw_ctx(omega).flatten(dim);
            let mut rng = seed::rng(3);
            let mut worst = 0.0f64;
            for _ in 0..1000 {
                let x: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect();
                let (z, ld_f) = model.forward_latent(&x, &ctx);
                let (back, ld_i) = model.inverse_latent(&z, &ctx);
                for (a, b) in x.iter().zip(&back) {
                    worst = worst.max((a - b).abs());
                }
                assert!((ld_f + ld_i).abs() < 1e-9);
            }
            assert!(worst < 1e-9, "round-trip error {worst} at dim {dim}");
        }
    }

    /// Hand value: identity flow at (0.5, 0.5) has density
    /// -ln(2 pi) + 2 ln 4 from the Gaussian and the logit Jacobian.
    #[test]
    fn log_prob_identity_hand_value() {
        let layout = FlowLayout {
            dim: 2,
            blocks: 8,
            hidden: vec![64, 64],
            ctx_len: 9,
            scale_clamp: 2.0,
            boundary_eps: 1e-4,
        };
        let model = FlowModel::new(layout, 0);
        let ctx = raw_ctx(3);
        let q = Config::new(vec![0.5, 0.5]);
        let expected = -LN_TWO_PI + 2.0 * 4.0f64.ln();
        assert!((model.log_prob(&q, &ctx) - expected).abs() < 1e-6);
    }

    #[test]
    fn conditioned_flow_matches_plain_paths() {
        use rand::Rng;
        let mut model = FlowModel::new(tiny_layout(4, 12), 5);
        randomize(&mut model, 11, 0.8);
        let ctx = raw_ctx(2);
        let conditioned = ConditionedFlow::new(&model, &ctx);
        let ctx_flat = ctx.flatten(4);
        let mut rng = seed::rng(8);
        for _ in 0..20 {
            let q: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() * 0.8 + 0.1).collect();
            let a = model.log_prob_flat(&q, &ctx_flat);
            let b = conditioned.log_prob(&q);
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        // Sampling through the cached inverse agrees with the plain inverse.
        let mut rng2 = seed::rng(9);
        let samples = conditioned.sample_batch(5, &mut rng2);
        let mut rng3 = seed::rng(9);
        for s in &samples {
            let z: Vec<f64> = (0..4).map(|_| rng3.sample::<f64, _>(StandardNormal)).collect();
            let direct = model.latent_to_config(&z, &ctx_flat);
            for (a, b) in s.coords().iter().zip(direct.coords()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batched_log_prob_matches_scalar() {
        use rand::Rng;
        let mut model = FlowModel::new(tiny_layout(4, 12), 6);
        randomize(&mut model, 13, 0.9);
        let ctx = raw_ctx(2);
        let conditioned = ConditionedFlow::new(&model, &ctx);
        let mut rng = seed::rng(14);
        let qs: Vec<Config> = (0..40)
            .map(|_| Config::new((0..4).map(|_| 0.05 + 0.9 * rng.gen::<f64>()).collect()))
            .collect();
        let batched = conditioned.log_prob_batch(&qs);
        for (q, lp) in qs.iter().zip(&batched) {
            let scalar = conditioned.log_prob(q.coords());
            assert!((lp - scalar).abs() < 1e-12, "{lp} vs {scalar}");
        }
    }

    #[test]
    fn zero_latent_maps_to_cube_center() {
        let model = FlowModel::new(tiny_layout(2, 9), 0);
        let ctx = raw_ctx(3).flatten(2);
        let q = model.latent_to_config(&[0.0, 0.0], &ctx);
        assert_eq!(q.coords(), &[0.5, 0.5]);
    }

    #[test]
    fn samples_stay_inside_open_cube() {
        let mut model = FlowModel::new(tiny_layout(2, 9), 4);
        randomize(&mut model, 21, 4.0);
        let ctx = raw_ctx(3);
        for q in model.sample(&ctx, 500, 99) {
            assert!(q.coords().iter().all(|c| *c > 0.0 && *c < 1.0));
        }
        // Determinism per seed.
        assert_eq!(model.sample(&ctx, 10, 7), model.sample(&ctx, 10, 7));
    }

    /// Finite-difference Jacobian oracle, with and without a masked target.
    #[test]
    fn analytic_logdet_matches_numeric() {
        use rand::Rng;
        let mut rng = seed::rng(31);
        for dim in [2usize, 4] {
            let omega = 4;
            let ctx_len = omega + 2 * dim + 2;
            for trial in 0..5 {
                let mut model = FlowModel::new(tiny_layout(dim, ctx_len), trial);
                randomize(&mut model, 100 + trial, 1.2);
                let omega_vec: Vec<f64> = (0..omega).map(|_| rng.gen::<f64>()).collect();
                let init = Config::new((0..dim).map(|_| rng.gen::<f64>()).collect());
                let target = if trial % 2 == 0 {
                    Some(Config::new((0..dim).map(|_| rng.gen::<f64>()).collect()))
                } else {
                    None // masked context keeps the same guarantee
                };
                let ctx = ConditioningContext::with_raw_omega(omega_vec, Some(init), target);
                let q = Config::new((0..dim).map(|_| 0.1 + 0.8 * rng.gen::<f64>()).collect());
                let ctx_flat = ctx.flatten(dim);
                let (y, logdet_t) = model.logit_transform(q.coords());
                let (_, logdet_blocks) = model.forward_latent(&y, &ctx_flat);
                let analytic = logdet_t + logdet_blocks;
                let numeric = model.logdet_numeric_check(&q, &ctx);
                let rel = (analytic - numeric).abs() / numeric.abs().max(1e-9);
                assert!(rel < 1e-4, "dim {dim} trial {trial}: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn identity_numeric_logdet_is_logit_term_only() {
        let model = FlowModel::new(tiny_layout(2, 9), 0);
        let ctx = raw_ctx(3);
        let q = Config::new(vec![0.3, 0.8]);
        let (_, logdet_t) = model.logit_transform(q.coords());
        let numeric = model.logdet_numeric_check(&q, &ctx);
        assert!((numeric - logdet_t).abs() < 1e-6);
    }
}
