//! Reverse-mode gradients of the flow training loss.
//!
//! The per-row loss core is `0.5 * ||f(T(q) | ctx)||^2 - log|J|` where the
//! Jacobian term collects every clamped scale output plus the (parameter
//! free) logit pre-transform term. A whole minibatch is pushed through one
//! conditioner at a time so each weight matrix is streamed once per step
//! instead of once per row.

use super::{FlowModel, NetRole};
use crate::mlp::BatchTape;

/// One training example: raw configuration coordinates plus the flattened
/// (possibly masked) conditioning vector.
#[derive(Debug, Clone, Copy)]
pub struct TrainRow<'a> {
    pub q: &'a [f64],
    pub ctx: &'a [f64],
}

struct BlockTape {
    za: Vec<f64>,
    zb: Vec<f64>,
    sa: Vec<f64>,
    exp_sa: Vec<f64>,
    sb: Vec<f64>,
    exp_sb: Vec<f64>,
    tape_sa: BatchTape,
    tape_ta: BatchTape,
    tape_sb: BatchTape,
    tape_tb: BatchTape,
}

struct ForwardPass {
    z_final: Vec<f64>,
    loss_terms: Vec<f64>,
    tapes: Vec<BlockTape>,
}

/// Split a row-major `rows x d` matrix into its leading `d_a` and trailing
/// `d - d_a` column groups.
fn split_cols(m: &[f64], rows: usize, d: usize, d_a: usize) -> (Vec<f64>, Vec<f64>) {
    let d_b = d - d_a;
    let mut a = vec![0.0; rows * d_a];
    let mut b = vec![0.0; rows * d_b];
    for r in 0..rows {
        a[r * d_a..(r + 1) * d_a].copy_from_slice(&m[r * d..r * d + d_a]);
        b[r * d_b..(r + 1) * d_b].copy_from_slice(&m[r * d + d_a..(r + 1) * d]);
    }
    (a, b)
}

fn join_cols(a: &[f64], b: &[f64], rows: usize, d_a: usize, d_b: usize) -> Vec<f64> {
    let d = d_a + d_b;
    let mut m = vec![0.0; rows * d];
    for r in 0..rows {
        m[r * d..r * d + d_a].copy_from_slice(&a[r * d_a..(r + 1) * d_a]);
        m[r * d + d_a..(r + 1) * d].copy_from_slice(&b[r * d_b..(r + 1) * d_b]);
    }
    m
}

fn rotate_rows_left(m: &mut [f64], d: usize, k: usize) {
    for row in m.chunks_exact_mut(d) {
        row.rotate_left(k);
    }
}

fn rotate_rows_right(m: &mut [f64], d: usize, k: usize) {
    for row in m.chunks_exact_mut(d) {
        row.rotate_right(k);
    }
}

/// Stack each half row next to its row's context vector.
fn with_ctx(half: &[f64], half_len: usize, rows: &[TrainRow<'_>]) -> Vec<f64> {
    let ctx_len = rows[0].ctx.len();
    let width = half_len + ctx_len;
    let mut m = vec![0.0; rows.len() * width];
    for (r, row) in rows.iter().enumerate() {
        m[r * width..r * width + half_len]
            .copy_from_slice(&half[r * half_len..(r + 1) * half_len]);
        m[r * width + half_len..(r + 1) * width].copy_from_slice(row.ctx);
    }
    m
}

fn forward_pass(model: &FlowModel, rows: &[TrainRow<'_>], keep_tapes: bool) -> ForwardPass {
    let b = rows.len();
    let d = model.layout().dim;
    let d_a = model.layout().split();
    let d_b = d - d_a;
    let alpha = model.layout().scale_clamp;
    let blocks = model.layout().blocks;
    let (shape_a, shape_b) = model.shapes();

    let mut z = vec![0.0; b * d];
    let mut logdet = vec![0.0; b];
    for (r, row) in rows.iter().enumerate() {
        let (y, ld) = model.logit_transform(&row.q);
        z[r * d..(r + 1) * d].copy_from_slice(&y);
        logdet[r] = ld;
    }

    let mut tapes = Vec::with_capacity(if keep_tapes { blocks } else { 0 });
    for k in 0..blocks {
        let (za, zb) = split_cols(&z, b, d, d_a);

        let in_b = with_ctx(&zb, d_b, rows);
        let tape_sa = shape_a.forward_batch(&model.params()[model.net_range(k, NetRole::ScaleA)], &in_b, b);
        let tape_ta = shape_a.forward_batch(&model.params()[model.net_range(k, NetRole::TransA)], &in_b, b);
        let sa: Vec<f64> = tape_sa
            .output()
            .iter()
            .map(|s| super::clamp_scale(*s, alpha))
            .collect();
        let exp_sa: Vec<f64> = sa.iter().map(|s| s.exp()).collect();
        let mut za_new = vec![0.0; b * d_a];
        for i in 0..b * d_a {
            za_new[i] = za[i] * exp_sa[i] + tape_ta.output()[i];
        }

        let in_a = with_ctx(&za_new, d_a, rows);
        let tape_sb = shape_b.forward_batch(&model.params()[model.net_range(k, NetRole::ScaleB)], &in_a, b);
        let tape_tb = shape_b.forward_batch(&model.params()[model.net_range(k, NetRole::TransB)], &in_a, b);
        let sb: Vec<f64> = tape_sb
            .output()
            .iter()
            .map(|s| super::clamp_scale(*s, alpha))
            .collect();
        let exp_sb: Vec<f64> = sb.iter().map(|s| s.exp()).collect();
        let mut zb_new = vec![0.0; b * d_b];
        for i in 0..b * d_b {
            zb_new[i] = zb[i] * exp_sb[i] + tape_tb.output()[i];
        }

        for r in 0..b {
            let mut ld = 0.0;
            for i in 0..d_a {
                ld += sa[r * d_a + i];
            }
            for i in 0..d_b {
                ld += sb[r * d_b + i];
            }
            logdet[r] += ld;
        }

        z = join_cols(&za_new, &zb_new, b, d_a, d_b);
        if k + 1 < blocks {
            rotate_rows_left(&mut z, d, d_a);
        }

        if keep_tapes {
            tapes.push(BlockTape {
                za,
                zb,
                sa,
                exp_sa,
                sb,
                exp_sb,
                tape_sa,
                tape_ta,
                tape_sb,
                tape_tb,
            });
        }
    }

    let loss_terms: Vec<f64> = (0..b)
        .map(|r| {
            let sq: f64 = z[r * d..(r + 1) * d].iter().map(|v| v * v).sum();
            0.5 * sq - logdet[r]
        })
        .collect();
    ForwardPass {
        z_final: z,
        loss_terms,
        tapes,
    }
}

/// Per-row loss cores `0.5 ||z||^2 - log|J|` (no prior, no Gaussian
/// constant); used for evaluation.
pub fn loss_terms(model: &FlowModel, rows: &[TrainRow<'_>]) -> Vec<f64> {
    if rows.is_empty() {
        return Vec::new();
    }
    forward_pass(model, rows, false).loss_terms
}

/// Sum of per-row loss cores over the batch, accumulating the summed
/// gradient with respect to every flow parameter into `grad`.
pub fn loss_sum_and_grad(model: &FlowModel, rows: &[TrainRow<'_>], grad: &mut [f64]) -> f64 {
    assert!(!rows.is_empty(), "empty minibatch");
    assert_eq!(grad.len(), model.param_count());
    let b = rows.len();
    let d = model.layout().dim;
    let d_a = model.layout().split();
    let d_b = d - d_a;
    let alpha = model.layout().scale_clamp;
    let blocks = model.layout().blocks;
    let (shape_a, shape_b) = model.shapes();
    let ctx_len = rows[0].ctx.len();

    let pass = forward_pass(model, rows, true);

    // d(0.5 ||z||^2)/dz = z.
    let mut dz = pass.z_final.clone();
    for k in (0..blocks).rev() {
        if k + 1 < blocks {
            rotate_rows_right(&mut dz, d, d_a);
        }
        let tape = &pass.tapes[k];
        let (dza_new_ext, dzb_new) = split_cols(&dz, b, d, d_a);

        // Part b update: zb' = zb * exp(sb) + tb.
        let mut dzb = vec![0.0; b * d_b];
        let mut dsb_raw = vec![0.0; b * d_b];
        for i in 0..b * d_b {
            dzb[i] = dzb_new[i] * tape.exp_sb[i];
            let dsb = dzb_new[i] * tape.zb[i] * tape.exp_sb[i] - 1.0;
            let u = tape.sb[i] / alpha;
            dsb_raw[i] = dsb * (1.0 - u * u);
        }
        let mut din = vec![0.0; b * (d_a + ctx_len)];
        let mut dza_new = dza_new_ext;
        shape_b.backward_batch(
            &model.params()[model.net_range(k, NetRole::TransB)],
            &tape.tape_tb,
            &dzb_new,
            &mut grad[model.net_range(k, NetRole::TransB)],
            Some(&mut din),
        );
        for r in 0..b {
            for i in 0..d_a {
                dza_new[r * d_a + i] += din[r * (d_a + ctx_len) + i];
            }
        }
        shape_b.backward_batch(
            &model.params()[model.net_range(k, NetRole::ScaleB)],
            &tape.tape_sb,
            &dsb_raw,
            &mut grad[model.net_range(k, NetRole::ScaleB)],
            Some(&mut din),
        );
        for r in 0..b {
            for i in 0..d_a {
                dza_new[r * d_a + i] += din[r * (d_a + ctx_len) + i];
            }
        }

        // Part a update: za' = za * exp(sa) + ta.
        let mut dza = vec![0.0; b * d_a];
        let mut dsa_raw = vec![0.0; b * d_a];
        for i in 0..b * d_a {
            dza[i] = dza_new[i] * tape.exp_sa[i];
            let dsa = dza_new[i] * tape.za[i] * tape.exp_sa[i] - 1.0;
            let u = tape.sa[i] / alpha;
            dsa_raw[i] = dsa * (1.0 - u * u);
        }
        let mut din_b = vec![0.0; b * (d_b + ctx_len)];
        let mut dzb_tot = dzb;
        shape_a.backward_batch(
            &model.params()[model.net_range(k, NetRole::TransA)],
            &tape.tape_ta,
            &dza_new,
            &mut grad[model.net_range(k, NetRole::TransA)],
            Some(&mut din_b),
        );
        for r in 0..b {
            for i in 0..d_b {
                dzb_tot[r * d_b + i] += din_b[r * (d_b + ctx_len) + i];
            }
        }
        shape_a.backward_batch(
            &model.params()[model.net_range(k, NetRole::ScaleA)],
            &tape.tape_sa,
            &dsa_raw,
            &mut grad[model.net_range(k, NetRole::ScaleA)],
            Some(&mut din_b),
        );
        for r in 0..b {
            for i in 0..d_b {
                dzb_tot[r * d_b + i] += din_b[r * (d_b + ctx_len) + i];
            }
        }

        dz = join_cols(&dza, &dzb_tot, b, d_a, d_b);
    }

    pass.loss_terms.iter().sum()
}
