//! Structure-blind baselines over the column-mean of the feature matrix:
//! ordinary least squares and a small MLP trained under the same
//! optimizer contract as the main model.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::dataset::WindowSample;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape};
use crate::training::Adam;

/// Column means of the unified feature matrix: a fixed-size vector that
/// erases both node identity and graph structure.
pub fn pool_features(sample: &WindowSample) -> Result<Vec<f64>> {
    Ok(sample.features()?.col_mean().data().to_vec())
}

/// (pooled features, target ms) pairs for a split.
pub fn baseline_data(samples: &[WindowSample], percentile: u8) -> Result<Vec<(Vec<f64>, f64)>> {
    samples
        .iter()
        .map(|s| Ok((pool_features(s)?, s.target(percentile)?)))
        .collect()
}

/// Ordinary least squares with a small ridge term.
#[derive(Clone, Debug)]
pub struct LinearBaseline {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

const RIDGE: f64 = 1e-6;

/// Solves the normal equations with ridge 1e-6; rank deficiency is
/// absorbed by the ridge.
pub fn fit_linear_baseline(train: &[(Vec<f64>, f64)]) -> Result<LinearBaseline> {
    if train.is_empty() {
        return Err(Error::Dataset("linear baseline: empty training set".into()));
    }
    let dim = train[0].0.len();
    if train.len() < dim + 1 {
        return Err(Error::Dataset(format!(
            "linear baseline needs at least {} samples, got {}",
            dim + 1,
            train.len()
        )));
    }
    let aug = dim + 1; // trailing intercept column
    let mut ata = vec![vec![0.0; aug]; aug];
    let mut aty = vec![0.0; aug];
    for (x, y) in train {
        if x.len() != dim {
            return Err(Error::Dataset("inconsistent feature widths".into()));
        }
        for i in 0..aug {
            let xi = if i < dim { x[i] } else { 1.0 };
            aty[i] += xi * y;
            for j in 0..aug {
                let xj = if j < dim { x[j] } else { 1.0 };
                ata[i][j] += xi * xj;
            }
        }
    }
    for (i, row) in ata.iter_mut().enumerate() {
        row[i] += RIDGE;
    }
    let theta = solve_linear_system(ata, aty)?;
    Ok(LinearBaseline {
        weights: theta[..dim].to_vec(),
        intercept: theta[dim],
    })
}

impl LinearBaseline {
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.intercept
            + self
                .weights
                .iter()
                .zip(features)
                .map(|(w, x)| w * x)
                .sum::<f64>()
    }
}

/// Gaussian elimination with partial pivoting.
fn solve_linear_system(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::Dataset("singular normal equations".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Training knobs for the MLP baseline; defaults mirror the main model's
/// optimizer contract.
#[derive(Clone, Debug)]
pub struct MlpTrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        MlpTrainConfig {
            hidden: 64,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 500,
            patience: 20,
            seed: 42,
        }
    }
}

/// Two-hidden-layer ReLU regressor with internal feature standardization
/// and target scaling.
#[derive(Clone, Debug)]
pub struct MlpBaseline {
    w1: Matrix,
    b1: Matrix,
    w2: Matrix,
    b2: Matrix,
    w3: Matrix,
    b3: Matrix,
    feat_mean: Vec<f64>,
    feat_std: Vec<f64>,
    target_scale: f64,
}

impl MlpBaseline {
    fn features_to_matrix(&self, rows: &[Vec<f64>]) -> Matrix {
        let dim = self.feat_mean.len();
        let mut m = Matrix::zeros(rows.len(), dim);
        for (r, row) in rows.iter().enumerate() {
            for c in 0..dim {
                m.set(r, c, (row[c] - self.feat_mean[c]) / self.feat_std[c]);
            }
        }
        m
    }

    fn forward(&self, x: &Matrix) -> Vec<f64> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let w1 = tape.leaf(self.w1.clone());
        let b1 = tape.leaf(self.b1.clone());
        let w2 = tape.leaf(self.w2.clone());
        let b2 = tape.leaf(self.b2.clone());
        let w3 = tape.leaf(self.w3.clone());
        let b3 = tape.leaf(self.b3.clone());
        let h = tape.matmul(xv, w1);
        let h = tape.add_row_broadcast(h, b1);
        let h = tape.relu(h);
        let h = tape.matmul(h, w2);
        let h = tape.add_row_broadcast(h, b2);
        let h = tape.relu(h);
        let out = tape.matmul(h, w3);
        let out = tape.add_row_broadcast(out, b3);
        tape.value(out)
            .data()
            .iter()
            .map(|v| v * self.target_scale)
            .collect()
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        self.forward(&self.features_to_matrix(&[features.to_vec()]))[0]
    }

    pub fn predict_batch(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        self.forward(&self.features_to_matrix(rows))
    }
}

/// Trains the MLP baseline with Adam, MSE only, early stopping on
/// validation MSE. Deterministic for a fixed seed.
pub fn fit_mlp_baseline(
    train: &[(Vec<f64>, f64)],
    val: &[(Vec<f64>, f64)],
    cfg: &MlpTrainConfig,
) -> Result<MlpBaseline> {
    if train.len() < 2 {
        return Err(Error::Dataset("mlp baseline: need at least 2 samples".into()));
    }
    let dim = train[0].0.len();

    // feature standardization from the training split
    let mut feat_mean = vec![0.0; dim];
    for (x, _) in train {
        for c in 0..dim {
            feat_mean[c] += x[c];
        }
    }
    for v in &mut feat_mean {
        *v /= train.len() as f64;
    }
    let mut feat_var = vec![0.0; dim];
    for (x, _) in train {
        for c in 0..dim {
            let d = x[c] - feat_mean[c];
            feat_var[c] += d * d;
        }
    }
    let feat_std: Vec<f64> = feat_var
        .iter()
        .map(|v| (v / train.len() as f64).sqrt().max(1e-8))
        .collect();
    let mean_target = train.iter().map(|(_, y)| y).sum::<f64>() / train.len() as f64;
    let target_scale = if mean_target.abs() > 1e-12 { mean_target.abs() } else { 1.0 };

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut xavier = |r: usize, c: usize| {
        let bound = (6.0 / (r + c) as f64).sqrt();
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-bound..bound)).collect())
            .expect("finite init")
    };
    let mut model = MlpBaseline {
        w1: xavier(dim, cfg.hidden),
        b1: Matrix::zeros(1, cfg.hidden),
        w2: xavier(cfg.hidden, cfg.hidden),
        b2: Matrix::zeros(1, cfg.hidden),
        w3: xavier(cfg.hidden, 1),
        b3: Matrix::zeros(1, 1),
        feat_mean,
        feat_std,
        target_scale,
    };

    let train_x = model.features_to_matrix(&train.iter().map(|(x, _)| x.clone()).collect::<Vec<_>>());
    let train_y: Vec<f64> = train.iter().map(|(_, y)| y / target_scale).collect();
    let val_rows: Vec<Vec<f64>> = val.iter().map(|(x, _)| x.clone()).collect();
    let val_y: Vec<f64> = val.iter().map(|(_, y)| *y).collect();

    let shapes = [
        model.w1.shape(),
        model.b1.shape(),
        model.w2.shape(),
        model.b2.shape(),
        model.w3.shape(),
        model.b3.shape(),
    ];
    let mut adam = Adam::new(cfg.learning_rate, 0.9, 0.999, 1e-8, &shapes);
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut indices: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, MlpBaseline)> = None;
    let mut patience_left = cfg.patience;

    for epoch in 0..cfg.max_epochs {
        use rand::seq::SliceRandom;
        indices.shuffle(&mut shuffle_rng);
        for chunk in indices.chunks(cfg.batch_size) {
            let mut xb = Matrix::zeros(chunk.len(), dim);
            let mut yb = Matrix::zeros(chunk.len(), 1);
            for (r, &i) in chunk.iter().enumerate() {
                for c in 0..dim {
                    xb.set(r, c, train_x.get(i, c));
                }
                yb.set(r, 0, train_y[i]);
            }
            let mut tape = Tape::new();
            let xv = tape.leaf(xb);
            let yv = tape.leaf(yb);
            let vars = [
                tape.leaf(model.w1.clone()),
                tape.leaf(model.b1.clone()),
                tape.leaf(model.w2.clone()),
                tape.leaf(model.b2.clone()),
                tape.leaf(model.w3.clone()),
                tape.leaf(model.b3.clone()),
            ];
            let h = tape.matmul(xv, vars[0]);
            let h = tape.add_row_broadcast(h, vars[1]);
            let h = tape.relu(h);
            let h = tape.matmul(h, vars[2]);
            let h = tape.add_row_broadcast(h, vars[3]);
            let h = tape.relu(h);
            let out = tape.matmul(h, vars[4]);
            let out = tape.add_row_broadcast(out, vars[5]);
            let diff = tape.sub(out, yv);
            let sq = tape.mul(diff, diff);
            let loss = tape.mean(sq);
            if !tape.scalar_value(loss).is_finite() {
                return Err(Error::Training(format!(
                    "mlp baseline: non-finite loss at epoch {epoch}"
                )));
            }
            tape.backward(loss)
                .map_err(|e| Error::Training(format!("mlp baseline backward: {e}")))?;
            let grads: Vec<Matrix> = vars.iter().map(|&v| tape.grad(v)).collect();
            drop(tape);
            let mut tensors = [
                &mut model.w1,
                &mut model.b1,
                &mut model.w2,
                &mut model.b2,
                &mut model.w3,
                &mut model.b3,
            ];
            adam.step(&mut tensors, &grads);
        }

        let val_mse = if val.is_empty() {
            let preds = model.predict_batch(
                &train.iter().map(|(x, _)| x.clone()).collect::<Vec<_>>(),
            );
            mse(&preds, &train.iter().map(|(_, y)| *y).collect::<Vec<_>>())
        } else {
            let preds = model.predict_batch(&val_rows);
            mse(&preds, &val_y)
        };
        let improved = best.as_ref().is_none_or(|(b, _)| val_mse < *b);
        if improved {
            best = Some((val_mse, model.clone()));
            patience_left = cfg.patience;
        } else {
            if patience_left == 0 {
                break;
            }
            patience_left -= 1;
        }
    }
    Ok(best.expect("at least one epoch ran").1)
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}
