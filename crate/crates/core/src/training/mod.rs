//! Composite loss, optimizer, training loop with early stopping, and
//! checkpoint persistence.
//!
//! The loss is mean squared error plus a weighted diversity term: each
//! expert's outputs over the batch are turned into a distribution by a
//! batch-axis softmax, and the negated average pairwise KL divergence
//! between those distributions rewards experts that behave differently
//! across samples.

pub mod checkpoint;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{split_by_time, WindowSample};
use crate::encoding::{fit_normalizer, Normalizer, ServiceGraph};
use crate::error::{Error, Result};
use crate::model::{forward_var, ModelParams, ModelVars};
use crate::multiscale::ScaleLevel;
use crate::numerics::{Matrix, Tape, Var};

/// Loss hyperparameters.
#[derive(Clone, Debug)]
pub struct LossConfig {
    pub lambda_kl: f64,
    pub kl_epsilon: f64,
    pub batch_size: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_kl: 0.01,
            kl_epsilon: 1e-8,
            batch_size: 32,
        }
    }
}

impl From<&RunConfig> for LossConfig {
    fn from(cfg: &RunConfig) -> Self {
        LossConfig {
            lambda_kl: cfg.lambda_kl,
            kl_epsilon: cfg.kl_epsilon,
            batch_size: cfg.batch_size,
        }
    }
}

/// Mean squared error over paired slices.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::Training(format!(
            "mse_loss: {} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let n = predictions.len() as f64;
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Tape builder: mean((preds - targets)^2) for N x 1 inputs.
pub fn mse_loss_var(tape: &mut Tape, predictions: Var, targets: Var) -> Var {
    let diff = tape.sub(predictions, targets);
    let sq = tape.mul(diff, diff);
    tape.mean(sq)
}

/// Tape builder for the diversity term over an N x K expert-output
/// matrix. Each expert's column becomes a batch-profile distribution via
/// softmax with epsilon smoothing (renormalized so KL stays nonnegative);
/// the result is -1/(K(K-1)) * sum of pairwise KL divergences, always <= 0.
pub fn kl_diversity_var(tape: &mut Tape, expert_outputs: Var, epsilon: f64) -> Var {
    let (n, k) = {
        let m = tape.value(expert_outputs);
        (m.rows(), m.cols())
    };
    assert!(n >= 2, "diversity term needs a batch of at least 2");
    if k < 2 {
        return tape.leaf(Matrix::zeros(1, 1));
    }
    // K x N: one row per expert across the batch.
    let profiles = tape.transpose(expert_outputs);
    let p = tape.row_softmax(profiles);
    let p = tape.add_scalar(p, epsilon);
    let p = tape.scale(p, 1.0 / (1.0 + n as f64 * epsilon));
    let logp = tape.log(p);

    // sum_{i != j} KL(P_i || P_j) = K * sum(P .* logP) - sum_n colsum(P) .* colsum(logP)
    let self_term = tape.mul(p, logp);
    let self_term = tape.sum(self_term);
    let self_term = tape.scale(self_term, k as f64);

    let ones = tape.leaf(Matrix::filled(1, k, 1.0));
    let col_p = tape.matmul(ones, p);
    let col_logp = tape.matmul(ones, logp);
    let cross = tape.mul(col_p, col_logp);
    let cross = tape.sum(cross);

    let total = tape.sub(self_term, cross);
    tape.scale(total, -1.0 / (k * (k - 1)) as f64)
}

/// Plain-value diversity term for an N x K batch of expert outputs.
pub fn kl_diversity(batch_expert_outputs: &Matrix, cfg: &LossConfig) -> Result<f64> {
    if batch_expert_outputs.rows() < 2 {
        return Err(Error::Training(
            "kl_diversity needs at least 2 samples".into(),
        ));
    }
    let mut tape = Tape::new();
    let o = tape.leaf(batch_expert_outputs.clone());
    let v = kl_diversity_var(&mut tape, o, cfg.kl_epsilon);
    Ok(tape.scalar_value(v))
}

/// Handles to the per-batch loss graph.
pub struct BatchGraph {
    pub loss: Var,
    /// N x 1 predictions in scaled target space.
    pub predictions: Var,
    /// N x K expert outputs.
    pub expert_outputs: Var,
}

/// Builds forward passes for every sample in the batch and the composite
/// loss on top of them. `features` are normalized per-sample matrices and
/// `targets` are in scaled space.
pub fn batch_loss_var(
    tape: &mut Tape,
    vars: &ModelVars,
    schedule: &[(ScaleLevel, usize)],
    adjacency: Var,
    features: &[Matrix],
    targets: &[f64],
    cfg: &LossConfig,
) -> BatchGraph {
    assert_eq!(features.len(), targets.len());
    assert!(!features.is_empty());
    let mut preds = Vec::with_capacity(features.len());
    let mut experts = Vec::with_capacity(features.len());
    for x in features {
        let xv = tape.leaf(x.clone());
        let out = forward_var(tape, vars, schedule, xv, adjacency);
        preds.push(out.l_hat);
        experts.push(out.expert_outputs);
    }
    let mut pred_col = preds[0];
    for &p in &preds[1..] {
        pred_col = tape.concat_rows(pred_col, p);
    }
    let mut expert_mat = experts[0];
    for &e in &experts[1..] {
        expert_mat = tape.concat_rows(expert_mat, e);
    }
    let target_col = tape.leaf(
        Matrix::from_vec(targets.len(), 1, targets.to_vec()).expect("finite targets"),
    );
    let mse = mse_loss_var(tape, pred_col, target_col);
    let loss = if cfg.lambda_kl != 0.0 && targets.len() >= 2 {
        let kl = kl_diversity_var(tape, expert_mat, cfg.kl_epsilon);
        let weighted = tape.scale(kl, cfg.lambda_kl);
        tape.add(mse, weighted)
    } else {
        mse
    };
    BatchGraph {
        loss,
        predictions: pred_col,
        expert_outputs: expert_mat,
    }
}

/// Plain-value composite loss for a batch.
pub fn total_loss(
    params: &ModelParams,
    adjacency: &Matrix,
    features: &[Matrix],
    targets: &[f64],
    cfg: &LossConfig,
) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::Training("total_loss on an empty batch".into()));
    }
    let mut tape = Tape::new();
    let vars = params.to_vars(&mut tape);
    let av = tape.leaf(adjacency.clone());
    let graph = batch_loss_var(&mut tape, &vars, &params.schedule, av, features, targets, cfg);
    Ok(tape.scalar_value(graph.loss))
}

/// Adam with bias correction; state lives per tensor in canonical order.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, shapes: &[(usize, usize)]) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) {
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            let gd = g.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gd[i];
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gd[i] * gd[i];
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// Everything a training run produces.
pub struct TrainResult {
    pub params: ModelParams,
    pub normalizer: Normalizer,
    /// Mean training target; the model learns targets divided by this.
    pub target_scale: f64,
    pub best_epoch: usize,
    /// Validation MSE in scaled space at the best epoch.
    pub best_val_mse: f64,
    pub epochs_run: usize,
    pub log: Vec<EpochLog>,
}

/// Normalized feature matrices for a slice of samples.
pub fn prepare_features(samples: &[WindowSample], normalizer: &Normalizer) -> Result<Vec<Matrix>> {
    samples
        .iter()
        .map(|s| Ok(normalizer.apply(&s.features()?)))
        .collect()
}

/// Scaled-space predictions for many samples on one tape.
pub fn predict_scaled(params: &ModelParams, adjacency: &Matrix, features: &[Matrix]) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars = params.to_vars(&mut tape);
    let av = tape.leaf(adjacency.clone());
    features
        .iter()
        .map(|x| {
            let xv = tape.leaf(x.clone());
            let out = forward_var(&mut tape, &vars, &params.schedule, xv, av);
            tape.scalar_value(out.l_hat)
        })
        .collect()
}

fn mean_squared_error_against(preds: &[f64], targets: &[f64]) -> f64 {
    mse_loss(preds, targets).unwrap_or(f64::INFINITY)
}

/// Trains on a time-ordered 70/15/15 split of `samples`. Deterministic
/// for a fixed `(config, seed)`. Aborts with parameter norms if the loss
/// goes non-finite.
pub fn train(
    graph: &ServiceGraph,
    samples: &[WindowSample],
    config: &RunConfig,
) -> Result<TrainResult> {
    config.validate()?;
    if samples.len() < 10 {
        return Err(Error::Training(format!(
            "dataset of {} windows is too small to split",
            samples.len()
        )));
    }
    let (train_split, val_split, _) = split_by_time(samples);
    let raw_train: Vec<Matrix> = train_split
        .iter()
        .map(|s| s.features())
        .collect::<Result<_>>()?;
    let normalizer = fit_normalizer(&raw_train)?;
    let train_x = prepare_features(train_split, &normalizer)?;
    let val_x = prepare_features(val_split, &normalizer)?;

    let train_targets_ms: Vec<f64> = train_split
        .iter()
        .map(|s| s.target(config.percentile))
        .collect::<Result<_>>()?;
    let val_targets_ms: Vec<f64> = val_split
        .iter()
        .map(|s| s.target(config.percentile))
        .collect::<Result<_>>()?;
    let mean_target = train_targets_ms.iter().sum::<f64>() / train_targets_ms.len() as f64;
    let target_scale = if mean_target > 1e-12 { mean_target } else { 1.0 };
    let train_targets: Vec<f64> = train_targets_ms.iter().map(|t| t / target_scale).collect();
    let val_targets: Vec<f64> = val_targets_ms.iter().map(|t| t / target_scale).collect();

    let model_config = config.model_config(graph.n());
    let mut params = ModelParams::init(&model_config, config.seed)?;
    let loss_cfg = LossConfig::from(config);
    let adjacency = graph.adjacency().clone();

    let shapes: Vec<(usize, usize)> = params.tensors().iter().map(|(_, m)| m.shape()).collect();
    let mut adam = Adam::new(
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.adam_epsilon,
        &shapes,
    );
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(config.seed.wrapping_add(SHUFFLE_STREAM));

    let mut best = BestState {
        params: params.clone(),
        val_mse: f64::INFINITY,
        epoch: 0,
    };
    let mut patience_left = config.patience;
    let mut log = Vec::new();
    let mut indices: Vec<usize> = (0..train_x.len()).collect();
    let mut epochs_run = 0;

    for epoch in 0..config.max_epochs {
        epochs_run = epoch + 1;
        indices.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in indices.chunks(loss_cfg.batch_size) {
            if chunk.len() < 2 {
                // the diversity term needs a batch distribution
                continue;
            }
            let feats: Vec<Matrix> = chunk.iter().map(|&i| train_x[i].clone()).collect();
            let targs: Vec<f64> = chunk.iter().map(|&i| train_targets[i]).collect();

            let mut tape = Tape::new();
            let vars = params.to_vars(&mut tape);
            let av = tape.leaf(adjacency.clone());
            let graph_out =
                batch_loss_var(&mut tape, &vars, &params.schedule, av, &feats, &targs, &loss_cfg);
            let loss = tape.scalar_value(graph_out.loss);
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}; largest parameter norms: {}",
                    params.norm_summary()
                )));
            }
            tape.backward(graph_out.loss).map_err(|e| {
                Error::Training(format!("backward failed at epoch {epoch}: {e}"))
            })?;
            let grads: Vec<Matrix> = vars.flat.iter().map(|&v| tape.grad(v)).collect();
            drop(tape);
            let mut tensors = params.tensors_mut();
            adam.step(&mut tensors, &grads);

            epoch_loss += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = if seen > 0 { epoch_loss / seen as f64 } else { f64::NAN };

        let val_mse = if val_x.is_empty() {
            train_loss
        } else {
            let preds = predict_scaled(&params, &adjacency, &val_x);
            mean_squared_error_against(&preds, &val_targets)
        };
        if !val_mse.is_finite() {
            return Err(Error::Training(format!(
                "non-finite validation loss at epoch {epoch}; largest parameter norms: {}",
                params.norm_summary()
            )));
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss: val_mse,
            lr: config.learning_rate,
        });

        if val_mse < best.val_mse {
            best = BestState {
                params: params.clone(),
                val_mse,
                epoch,
            };
            patience_left = config.patience;
        } else {
            if patience_left == 0 {
                break;
            }
            patience_left -= 1;
        }
    }

    Ok(TrainResult {
        params: best.params,
        normalizer,
        target_scale,
        best_epoch: best.epoch,
        best_val_mse: best.val_mse,
        epochs_run,
        log,
    })
}

struct BestState {
    params: ModelParams,
    val_mse: f64,
    epoch: usize,
}

// Distinct stream for batch shuffling so it never aliases the
// initialization stream.
const SHUFFLE_STREAM: u64 = 0x53_48_55_46_46_4c_45_00;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Variant};
    use crate::encoding::FEATURE_DIM;
    use rand::Rng;
    use rand::rngs::StdRng;

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 5.0);
        // scaling residuals by c scales the loss by c^2
        let base = mse_loss(&[0.0, 0.0], &[1.0, 3.0]).unwrap();
        let scaled = mse_loss(&[0.0, 0.0], &[3.0, 9.0]).unwrap();
        assert!((scaled - 9.0 * base).abs() < 1e-12);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn identical_experts_have_zero_diversity() {
        let outputs = Matrix::from_rows(&[vec![0.3, 0.3], vec![1.7, 1.7], vec![-0.4, -0.4]]).unwrap();
        let v = kl_diversity(&outputs, &LossConfig::default()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn two_expert_example_matches_manual_kl() {
        // Expert profiles (0, ln 3) and (ln 3, 0) over a 2-sample batch.
        let outputs =
            Matrix::from_rows(&[vec![0.0, 3.0f64.ln()], vec![3.0f64.ln(), 0.0]]).unwrap();
        let cfg = LossConfig::default();
        let v = kl_diversity(&outputs, &cfg).unwrap();

        // independent scalar oracle with the same smoothing
        let smooth = |p: [f64; 2]| {
            let eps = cfg.kl_epsilon;
            let z = 1.0 + 2.0 * eps;
            [(p[0] + eps) / z, (p[1] + eps) / z]
        };
        let p = smooth([0.25, 0.75]);
        let q = smooth([0.75, 0.25]);
        let kl = |a: [f64; 2], b: [f64; 2]| {
            a[0] * (a[0] / b[0]).ln() + a[1] * (a[1] / b[1]).ln()
        };
        let expect = -(kl(p, q) + kl(q, p)) / 2.0;
        assert!((v - expect).abs() < 1e-12, "v={v} expect={expect}");
        assert!((v - (-0.5493)).abs() < 1e-4);
    }

    #[test]
    fn diversity_is_nonpositive_and_decreases_with_divergence() {
        let mut rng = StdRng::seed_from_u64(3);
        let cfg = LossConfig::default();
        for _ in 0..20 {
            let m = Matrix::from_vec(
                4,
                3,
                (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            )
            .unwrap();
            let v = kl_diversity(&m, &cfg).unwrap();
            assert!(v <= 1e-15, "diversity must be <= 0, got {v}");
        }
        // stretching profiles apart increases divergence (more negative)
        let near = Matrix::from_rows(&[vec![0.1, -0.1], vec![-0.1, 0.1]]).unwrap();
        let far = Matrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let v_near = kl_diversity(&near, &cfg).unwrap();
        let v_far = kl_diversity(&far, &cfg).unwrap();
        assert!(v_far < v_near);
    }

    #[test]
    fn diversity_is_shift_invariant_per_expert() {
        let cfg = LossConfig::default();
        let base = Matrix::from_rows(&[vec![0.2, -0.5], vec![1.1, 0.3], vec![-0.7, 0.9]]).unwrap();
        let mut shifted = base.clone();
        for r in 0..3 {
            shifted.set(r, 0, base.get(r, 0) + 11.0);
        }
        let a = kl_diversity(&base, &cfg).unwrap();
        let b = kl_diversity(&shifted, &cfg).unwrap();
        assert!((a - b).abs() < 1e-9, "a={a} b={b}");
    }

    #[test]
    fn diversity_rejects_single_sample() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(kl_diversity(&m, &LossConfig::default()).is_err());
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_nodes: 4,
            feature_dim: FEATURE_DIM,
            embed_dim: 6,
            attn_dim: 6,
            scene_hidden: 6,
            scene_dim: 4,
            expert_hidden: 6,
            n_experts: 4,
            n_levels: 3,
            variant: Variant::Full,
        }
    }

    fn tiny_instance(seed: u64, n: usize, count: usize) -> (Matrix, Vec<Matrix>, Vec<f64>) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.gen_bool(0.4) {
                    a.set(i, j, 1.0);
                }
            }
        }
        let feats = (0..count)
            .map(|_| {
                Matrix::from_vec(
                    n,
                    FEATURE_DIM,
                    (0..n * FEATURE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
                .unwrap()
            })
            .collect();
        let targets = (0..count).map(|_| rng.gen_range(0.2..2.0)).collect();
        (a, feats, targets)
    }

    #[test]
    fn lambda_zero_reduces_to_pure_mse() {
        let params = ModelParams::init(&tiny_config(), 5).unwrap();
        let (a, feats, targets) = tiny_instance(7, 4, 4);
        let cfg0 = LossConfig {
            lambda_kl: 0.0,
            ..LossConfig::default()
        };
        let total = total_loss(&params, &a, &feats, &targets, &cfg0).unwrap();
        let preds = predict_scaled(&params, &a, &feats);
        let mse = mse_loss(&preds, &targets).unwrap();
        assert!((total - mse).abs() < 1e-12);

        // with the diversity term the total is strictly below the MSE
        // unless the experts are exactly identical
        let cfg = LossConfig::default();
        let with_kl = total_loss(&params, &a, &feats, &targets, &cfg).unwrap();
        assert!(with_kl <= mse + 1e-15);
    }

    #[test]
    fn perfect_predictions_with_identical_experts_zero_the_loss() {
        let mut config = tiny_config();
        config.variant = Variant::Full;
        let mut params = ModelParams::init(&config, 13).unwrap();
        // clone expert 0 into every slot so the diversity term vanishes
        if let crate::model::Head::Mixture(scene) = &mut params.head {
            let first = scene.experts[0].clone();
            for e in scene.experts.iter_mut() {
                *e = first.clone();
            }
        }
        let (a, feats, _) = tiny_instance(3, 4, 4);
        let targets = predict_scaled(&params, &a, &feats);
        let total = total_loss(&params, &a, &feats, &targets, &LossConfig::default()).unwrap();
        assert!(total.abs() < 1e-15, "total = {total}");
    }

    #[test]
    fn one_small_step_decreases_loss_on_frozen_batch() {
        let mut params = ModelParams::init(&tiny_config(), 9).unwrap();
        let (a, feats, targets) = tiny_instance(11, 4, 6);
        let cfg = LossConfig::default();
        let before = total_loss(&params, &a, &feats, &targets, &cfg).unwrap();

        let mut tape = Tape::new();
        let vars = params.to_vars(&mut tape);
        let av = tape.leaf(a.clone());
        let graph = batch_loss_var(&mut tape, &vars, &params.schedule, av, &feats, &targets, &cfg);
        tape.backward(graph.loss).unwrap();
        let grads: Vec<Matrix> = vars.flat.iter().map(|&v| tape.grad(v)).collect();
        drop(tape);
        let shapes: Vec<(usize, usize)> = params.tensors().iter().map(|(_, m)| m.shape()).collect();
        let mut adam = Adam::new(1e-5, 0.9, 0.999, 1e-8, &shapes);
        let mut tensors = params.tensors_mut();
        adam.step(&mut tensors, &grads);

        let after = total_loss(&params, &a, &feats, &targets, &cfg).unwrap();
        assert!(after < before, "before={before} after={after}");
    }
}
