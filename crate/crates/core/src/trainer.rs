//! Maximum-a-posteriori flow training with validation tracking,
//! conditioning-mask augmentation and best-checkpoint selection.
//!
//! The per-row loss is the squared latent norm halved minus the full
//! log-Jacobian, averaged over the minibatch, plus the Gaussian weight-prior
//! penalty. Masking each endpoint independently during training is what
//! teaches the model to answer partially conditioned queries later.
//! Minibatches are accumulated serially in a fixed order, so a training run
//! is reproducible bit for bit from its seed.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use std::path::Path;

use crate::dataset::{Dataset, Split};
use crate::env::Config;
use crate::error::{Error, Result};
use crate::flow::grad::{loss_sum_and_grad, loss_terms, TrainRow};
use crate::flow::{ConditioningContext, FlowLayout, FlowModel, LN_TWO_PI};
use crate::mlp::AdamState;
use crate::seed;

/// Evaluation chunk size; bounds the activation memory of batched passes.
const EVAL_CHUNK: usize = 256;

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    /// Weight-prior variance (sigma_theta squared).
    pub weight_prior_variance: f64,
    pub p_mask_init: f64,
    pub p_mask_target: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults: minutes on a laptop core.
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 128,
            step_size: 1e-3,
            weight_prior_variance: 1.0,
            p_mask_init: 0.25,
            p_mask_target: 0.25,
            seed,
        }
    }

    /// Protocol-scale epoch count.
    pub fn paper_scale(seed: u64) -> Self {
        TrainConfig {
            epochs: 1500,
            ..TrainConfig::desk(seed)
        }
    }

    fn validate(&self) {
        assert!(self.batch_size > 0, "batch size must be positive");
        assert!(self.step_size > 0.0, "step size must be positive");
        assert!(self.weight_prior_variance > 0.0, "prior variance must be positive");
        assert!((0.0..1.0).contains(&self.p_mask_init), "mask probability outside [0,1)");
        assert!((0.0..1.0).contains(&self.p_mask_target), "mask probability outside [0,1)");
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_nll: f64,
    pub grad_norm: f64,
    pub seconds: f64,
}

/// Loss and validation series over a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_nll,grad_norm,seconds\n");
        for row in &self.epochs {
            out.push_str(&format!(
                "{},{:.9},{:.9},{:.9},{:.6}\n",
                row.epoch, row.train_loss, row.val_nll, row.grad_norm, row.seconds
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Minibatch loss and gradient: mean row loss plus the weight prior.
pub fn loss(
    model: &FlowModel,
    rows: &[TrainRow<'_>],
    weight_prior_variance: f64,
) -> Result<(f64, Vec<f64>)> {
    assert!(!rows.is_empty(), "empty minibatch");
    let n = rows.len() as f64;
    let mut grad = vec![0.0; model.param_count()];
    let loss_sum = loss_sum_and_grad(model, rows, &mut grad);
    let mut sq_params = 0.0;
    for (g, p) in grad.iter_mut().zip(model.params()) {
        *g = *g / n + p / weight_prior_variance;
        sq_params += p * p;
    }
    let total = loss_sum / n + sq_params / (2.0 * weight_prior_variance);
    if !total.is_finite() {
        return Err(Error::Divergence(format!("non-finite loss {total}")));
    }
    Ok((total, grad))
}

/// Mean negative log-likelihood of rows under the model (no prior term).
pub fn evaluate_nll(model: &FlowModel, rows: &[TrainRow<'_>]) -> f64 {
    assert!(!rows.is_empty(), "evaluate_nll over no rows");
    let d = model.dim() as f64;
    let mut sum = 0.0;
    for chunk in rows.chunks(EVAL_CHUNK) {
        sum += loss_terms(model, chunk).iter().sum::<f64>();
    }
    sum / rows.len() as f64 + 0.5 * d * LN_TWO_PI
}

/// A dataset row with its four mask variants pre-flattened:
/// [full, init only, target only, omega only].
struct PreparedRow {
    q: Vec<f64>,
    ctx: [Vec<f64>; 4],
}

fn prepare_rows(rows: &[(Config, ConditioningContext)], dim: usize) -> Vec<PreparedRow> {
    rows.iter()
        .map(|(q, ctx)| PreparedRow {
            q: q.coords().to_vec(),
            ctx: [
                ctx.flatten(dim),
                ctx.masked(false, true).flatten(dim),
                ctx.masked(true, false).flatten(dim),
                ctx.masked(true, true).flatten(dim),
            ],
        })
        .collect()
}

fn full_rows(prepared: &[PreparedRow]) -> Vec<TrainRow<'_>> {
    prepared
        .iter()
        .map(|r| TrainRow {
            q: &r.q,
            ctx: &r.ctx[0],
        })
        .collect()
}

/// Fit a flow to a dataset. Returns the parameters of the epoch with the
/// best validation NLL and the per-epoch report.
///
/// Shuffling, masking and initialization all derive from `config.seed`;
/// identical invocations produce identical models. A non-finite loss rolls
/// the epoch back and halves the step size, up to three times.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(FlowModel, TrainReport)> {
    config.validate();
    let layout = FlowLayout::standard(dataset.robot);
    train_with_layout(dataset, config, layout)
}

/// [`train`] with an explicit architecture (small layouts for tests).
pub fn train_with_layout(
    dataset: &Dataset,
    config: &TrainConfig,
    layout: FlowLayout,
) -> Result<(FlowModel, TrainReport)> {
    config.validate();
    let dim = layout.dim;
    let mut model = FlowModel::new(layout, seed::derive(config.seed, "train-init"));
    model.meta.robot = Some(dataset.robot);
    model.meta.train_seed = Some(config.seed);

    let mut report = TrainReport::default();
    if config.epochs == 0 {
        model.meta.epochs_trained = Some(0);
        return Ok((model, report));
    }

    let train_pairs = dataset.rows_for_split(Some(Split::Train));
    let val_pairs = dataset.rows_for_split(Some(Split::Validation));
    assert!(!train_pairs.is_empty(), "dataset has no training rows");
    let train_rows = prepare_rows(&train_pairs, dim);
    // Small datasets may have an empty validation split; fall back to the
    // training rows so best-checkpoint selection stays well defined.
    let val_rows = if val_pairs.is_empty() {
        prepare_rows(&train_pairs, dim)
    } else {
        prepare_rows(&val_pairs, dim)
    };
    let val_view = full_rows(&val_rows);

    // The posterior multiplies one weight prior against the whole corpus
    // likelihood, so against the per-row mean the prior enters at 1/N
    // strength. Applying it unscaled freezes a 400k-parameter model at the
    // identity map.
    let effective_variance = config.weight_prior_variance * train_rows.len() as f64;

    let mut optimizer = AdamState::new(model.param_count(), config.step_size);
    let mut best_val = evaluate_nll(&model, &val_view);
    let mut best_params = model.params().to_vec();
    let mut reductions = 0usize;

    let mut epoch = 0usize;
    while epoch < config.epochs {
        let started = Instant::now();
        let snapshot = model.params().to_vec();
        let mut epoch_rng = seed::rng(seed::derive_n(config.seed, "train-epoch", &[epoch as u64]));
        let mut order: Vec<usize> = (0..train_rows.len()).collect();
        order.shuffle(&mut epoch_rng);

        let mut loss_sum = 0.0;
        let mut grad_norm_sum = 0.0;
        let mut batches = 0usize;
        let mut diverged = false;
        for batch_ids in order.chunks(config.batch_size) {
            let rows: Vec<TrainRow<'_>> = batch_ids
                .iter()
                .map(|&i| {
                    let row = &train_rows[i];
                    let mask_init = epoch_rng.gen::<f64>() < config.p_mask_init;
                    let mask_target = epoch_rng.gen::<f64>() < config.p_mask_target;
                    let variant = (mask_init as usize) + 2 * (mask_target as usize);
                    TrainRow {
                        q: &row.q,
                        ctx: &row.ctx[variant],
                    }
                })
                .collect();
            let step = loss(&model, &rows, effective_variance)
                .and_then(|(l, grad)| {
                    optimizer.step(model.params_mut(), &grad)?;
                    Ok((l, grad))
                });
            match step {
                Ok((l, grad)) => {
                    loss_sum += l;
                    grad_norm_sum += grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                    batches += 1;
                }
                Err(Error::Divergence(_)) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }

        if diverged {
            reductions += 1;
            if reductions > 3 {
                return Err(Error::Divergence(format!(
                    "training diverged after {reductions} step-size reductions"
                )));
            }
            // Roll the epoch back and retry at half the step size.
            model.params_mut().copy_from_slice(&snapshot);
            optimizer = AdamState::new(model.param_count(), optimizer.step_size * 0.5);
            continue;
        }

        let val_nll = evaluate_nll(&model, &val_view);
        if val_nll < best_val {
            best_val = val_nll;
            best_params.copy_from_slice(model.params());
        }
        report.epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val_nll,
            grad_norm: grad_norm_sum / batches.max(1) as f64,
            seconds: started.elapsed().as_secs_f64(),
        });
        epoch += 1;
    }

    model.params_mut().copy_from_slice(&best_params);
    model.meta.epochs_trained = Some(config.epochs);
    model.meta.best_val_nll = Some(best_val);
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetEnv, Demonstration};
    use crate::env::{encode_workspace, generate_environment, RobotKind};

    fn tiny_layout(dim: usize) -> FlowLayout {
        FlowLayout {
            dim,
            blocks: 2,
            hidden: vec![6],
            ctx_len: 2 * crate::env::ENCODING_POINTS + 2 * dim + 2,
            scale_clamp: 2.0,
            boundary_eps: 1e-4,
        }
    }

    /// A dataset whose waypoints are drawn from two Gaussian blobs inside
    /// one environment (the demonstrations are synthetic, not planned).
    fn blob_dataset(rows_per_blob: usize, seed: u64) -> Dataset {
        let environment = generate_environment(seed, RobotKind::PointRobot2, 0.1).unwrap();
        let encoding = encode_workspace(&environment);
        let mut rng = seed::rng(seed::derive(seed, "blobs"));
        let mut demonstrations = Vec::new();
        let centers = [[0.25, 0.25], [0.75, 0.75]];
        for (b, center) in centers.iter().enumerate() {
            let mut waypoints = Vec::new();
            for _ in 0..rows_per_blob {
                let x = (center[0] + rng.gen::<f64>() * 0.12 - 0.06).clamp(0.01, 0.99);
                let y = (center[1] + rng.gen::<f64>() * 0.12 - 0.06).clamp(0.01, 0.99);
                waypoints.push(Config::new(vec![x, y]));
            }
            demonstrations.push(Demonstration {
                env_index: 0,
                q_init: Config::new(vec![0.1, 0.1]),
                q_target: Config::new(vec![0.9, 0.9]),
                waypoints,
                path_cost: 0.0,
                split: if b == 0 { Split::Train } else { Split::Train },
            });
        }
        // A thin validation slice drawn the same way.
        let mut val_waypoints = Vec::new();
        for i in 0..rows_per_blob / 2 {
            let center = centers[i % 2];
            let x = (center[0] + rng.gen::<f64>() * 0.12 - 0.06).clamp(0.01, 0.99);
            let y = (center[1] + rng.gen::<f64>() * 0.12 - 0.06).clamp(0.01, 0.99);
            val_waypoints.push(Config::new(vec![x, y]));
        }
        demonstrations.push(Demonstration {
            env_index: 0,
            q_init: Config::new(vec![0.1, 0.1]),
            q_target: Config::new(vec![0.9, 0.9]),
            waypoints: val_waypoints,
            path_cost: 0.0,
            split: Split::Validation,
        });
        Dataset {
            robot: RobotKind::PointRobot2,
            seed,
            environments: vec![DatasetEnv {
                environment,
                encoding,
            }],
            demonstrations,
        }
    }

    fn single_row_storage() -> (Vec<f64>, Vec<f64>) {
        let ctx = ConditioningContext::with_raw_omega(vec![0.0; 3], None, None);
        (vec![0.5, 0.5], ctx.flatten(2))
    }

    fn identity_model() -> FlowModel {
        FlowModel::new(
            FlowLayout {
                dim: 2,
                blocks: 8,
                hidden: vec![16],
                ctx_len: 9,
                scale_clamp: 2.0,
                boundary_eps: 1e-4,
            },
            0,
        )
    }

    /// Identity flow, one row at the cube center, zero parameters:
    /// loss = 0.5 * 0 - 2 ln 4.
    #[test]
    fn loss_identity_hand_value() {
        let mut model = identity_model();
        model.params_mut().fill(0.0); // theta = 0: no prior contribution
        let (q, ctx) = single_row_storage();
        let rows = [TrainRow { q: &q, ctx: &ctx }];
        let (l, _) = loss(&model, &rows, 1.0).unwrap();
        assert!((l - (-2.0 * 4.0f64.ln())).abs() < 1e-9, "{l}");
    }

    /// Doubling the prior variance halves only the regularization term.
    #[test]
    fn prior_variance_scales_regularizer() {
        let mut model = identity_model();
        let mut rng = seed::rng(5);
        for p in model.params_mut() {
            *p = (rng.gen::<f64>() - 0.5) * 0.1;
        }
        let (q, ctx) = single_row_storage();
        let rows = [TrainRow { q: &q, ctx: &ctx }];
        let core: f64 = loss_terms(&model, &rows)[0];
        let (l1, _) = loss(&model, &rows, 1.0).unwrap();
        let (l2, _) = loss(&model, &rows, 2.0).unwrap();
        let r1 = l1 - core;
        let r2 = l2 - core;
        assert!(r1 > 0.0);
        assert!((r2 - r1 / 2.0).abs() < 1e-12);
    }

    /// Full-loss gradient (prior included) against central differences on a
    /// model under 200 parameters.
    #[test]
    fn loss_gradient_matches_finite_differences() {
        let layout = FlowLayout {
            dim: 2,
            blocks: 2,
            hidden: vec![2],
            ctx_len: 8,
            scale_clamp: 2.0,
            boundary_eps: 1e-4,
        };
        let mut model = FlowModel::new(layout, 1);
        assert!(model.param_count() <= 200, "{}", model.param_count());
        let mut rng = seed::rng(9);
        for p in model.params_mut() {
            *p = (rng.gen::<f64>() - 0.5) * 0.6;
        }
        let ctx = ConditioningContext::with_raw_omega(vec![0.4, 0.6], None, None).flatten(2);
        let qs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..2).map(|_| 0.2 + 0.6 * rng.gen::<f64>()).collect())
            .collect();
        let rows: Vec<TrainRow<'_>> = qs.iter().map(|q| TrainRow { q, ctx: &ctx }).collect();
        let sigma_sq = 1.5;
        let (_, grad) = loss(&model, &rows, sigma_sq).unwrap();
        let h = 1e-5;
        let scalar_loss = |model: &FlowModel| {
            let core: f64 = loss_terms(model, &rows).iter().sum::<f64>() / rows.len() as f64;
            let sq: f64 = model.params().iter().map(|p| p * p).sum();
            core + sq / (2.0 * sigma_sq)
        };
        for i in 0..model.param_count() {
            let orig = model.params()[i];
            model.params_mut()[i] = orig + h;
            let hi = scalar_loss(&model);
            model.params_mut()[i] = orig - h;
            let lo = scalar_loss(&model);
            model.params_mut()[i] = orig;
            let fd = (hi - lo) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-4, "param {i}: analytic {} fd {fd}", grad[i]);
        }
    }

    #[test]
    fn loss_rejects_non_finite_parameters() {
        let mut model = identity_model();
        model.params_mut()[0] = f64::NAN;
        let (q, ctx) = single_row_storage();
        let rows = [TrainRow { q: &q, ctx: &ctx }];
        assert!(matches!(loss(&model, &rows, 1.0), Err(Error::Divergence(_))));
    }

    /// Negated log-density hand value for the identity model.
    #[test]
    fn nll_identity_hand_value() {
        let model = identity_model();
        let (q, ctx) = single_row_storage();
        let rows = vec![TrainRow { q: &q, ctx: &ctx }; 4];
        let nll = evaluate_nll(&model, &rows);
        let expected = -(-LN_TWO_PI + 2.0 * 4.0f64.ln());
        assert!((nll - expected).abs() < 1e-9, "{nll} vs {expected}");
    }

    #[test]
    fn nll_is_permutation_invariant() {
        let mut model = identity_model();
        let mut rng = seed::rng(3);
        for p in model.params_mut() {
            *p = (rng.gen::<f64>() - 0.5) * 0.4;
        }
        let storage: Vec<(Vec<f64>, Vec<f64>)> = (0..7)
            .map(|_| {
                let ctx = ConditioningContext::with_raw_omega(
                    (0..3).map(|_| rng.gen::<f64>()).collect(),
                    None,
                    None,
                );
                (
                    (0..2).map(|_| 0.2 + 0.6 * rng.gen::<f64>()).collect(),
                    ctx.flatten(2),
                )
            })
            .collect();
        let rows: Vec<TrainRow<'_>> = storage.iter().map(|(q, c)| TrainRow { q, ctx: c }).collect();
        let mut reversed = rows.clone();
        reversed.reverse();
        let a = evaluate_nll(&model, &rows);
        let b = evaluate_nll(&model, &reversed);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_returns_identity_model() {
        let dataset = blob_dataset(20, 3);
        let mut config = TrainConfig::desk(1);
        config.epochs = 0;
        let (model, report) = train_with_layout(&dataset, &config, tiny_layout(2)).unwrap();
        assert!(model.is_identity_init());
        assert!(report.epochs.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let dataset = blob_dataset(15, 4);
        let mut config = TrainConfig::desk(7);
        config.epochs = 3;
        let (a, ra) = train_with_layout(&dataset, &config, tiny_layout(2)).unwrap();
        let (b, rb) = train_with_layout(&dataset, &config, tiny_layout(2)).unwrap();
        assert_eq!(a.params(), b.params());
        // Everything except wall time must reproduce exactly.
        for (x, y) in ra.epochs.iter().zip(&rb.epochs) {
            assert_eq!(x.train_loss, y.train_loss);
            assert_eq!(x.val_nll, y.val_nll);
            assert_eq!(x.grad_norm, y.grad_norm);
        }
    }

    /// Training reduces held-out NLL, and the returned model is the best
    /// validation checkpoint of the run.
    #[test]
    fn training_improves_validation_nll() {
        let dataset = blob_dataset(60, 5);
        let mut config = TrainConfig::desk(11);
        config.epochs = 25;
        let (model, report) = train_with_layout(&dataset, &config, tiny_layout(2)).unwrap();
        assert_eq!(report.epochs.len(), 25);
        let first = report.epochs.first().unwrap().val_nll;
        let last_best = report
            .epochs
            .iter()
            .map(|e| e.val_nll)
            .fold(f64::INFINITY, f64::min);
        assert!(last_best < first, "no improvement: {first} -> {last_best}");
        let returned = model.meta.best_val_nll.unwrap();
        for e in &report.epochs {
            assert!(returned <= e.val_nll + 1e-12, "best checkpoint not minimal");
        }
        // Trained rows beat the identity baseline on the training set.
        let train_pairs = dataset.rows_for_split(Some(Split::Train));
        let prepared = prepare_rows(&train_pairs, 2);
        let rows = full_rows(&prepared);
        let identity = FlowModel::new(tiny_layout(2), seed::derive(config.seed, "train-init"));
        assert!(evaluate_nll(&model, &rows) < evaluate_nll(&identity, &rows));

        // Sampling self-consistency: the model's own samples carry higher
        // mean log-density than uniform points under the same context.
        let ctx = ConditioningContext::new(
            &dataset.environments[0].encoding,
            Some(Config::new(vec![0.1, 0.1])),
            Some(Config::new(vec![0.9, 0.9])),
        );
        let own = model.sample(&ctx, 1000, 33);
        let mut rng = seed::rng(34);
        let uniform: Vec<Config> = (0..1000)
            .map(|_| Config::new(vec![rng.gen(), rng.gen()]))
            .collect();
        let mean_lp = |qs: &[Config]| {
            qs.iter().map(|q| model.log_prob(q, &ctx)).sum::<f64>() / qs.len() as f64
        };
        assert!(
            mean_lp(&own) > mean_lp(&uniform),
            "samples are not concentrated where the density is"
        );
    }

    #[test]
    fn paper_scale_epoch_count() {
        let config = TrainConfig::paper_scale(0);
        assert_eq!(config.epochs, 1500);
        assert_eq!(TrainConfig::desk(0).epochs, 200);
    }

    #[test]
    fn report_csv_has_header_and_rows() {
        let report = TrainReport {
            epochs: vec![EpochStats {
                epoch: 0,
                train_loss: -1.0,
                val_nll: -0.5,
                grad_norm: 2.0,
                seconds: 0.1,
            }],
        };
        let csv = report.to_csv();
        assert!(csv.starts_with("epoch,train_loss,val_nll,grad_norm,seconds\n"));
        assert_eq!(csv.lines().count(), 2);
    }
}
