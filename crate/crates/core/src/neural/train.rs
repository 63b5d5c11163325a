use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_grad, LossKind, Targets};
use super::model::{NormStats, TwoTowerCnn, ACCEL_LEN, AROUSAL_LEN};
use super::optim::{AdamW, PlateauScheduler};
use super::tensor::{Scalar, Tensor};
use super::NeuralError;
use crate::eval;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 1e-2,
            batch_size: 64,
            scheduler_factor: 0.5,
            scheduler_patience: 3,
            early_stop_patience: 10,
            max_epochs: 100,
            seed: 0,
        }
    }
}

/// Window tensors paired row-for-row with targets.
#[derive(Debug, Clone)]
pub struct CnnData {
    /// One 180-sample arousal grid per window.
    pub arousal: Vec<Vec<f64>>,
    /// One 4500-sample accel magnitude grid per window.
    pub accel: Vec<Vec<f64>>,
    pub targets: Targets,
}

impl CnnData {
    pub fn len(&self) -> usize {
        self.arousal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arousal.is_empty()
    }

    fn validate(&self) -> Result<(), NeuralError> {
        if self.is_empty() {
            return Err(NeuralError::EmptyData);
        }
        if self.accel.len() != self.len() || self.targets.len() != self.len() {
            return Err(NeuralError::TargetCount {
                targets: self.targets.len(),
                rows: self.len(),
            });
        }
        for (a, c) in self.arousal.iter().zip(&self.accel) {
            if a.len() != AROUSAL_LEN || c.len() != ACCEL_LEN {
                return Err(NeuralError::Shape(format!(
                    "window grids must be {AROUSAL_LEN}/{ACCEL_LEN}, got {}/{}",
                    a.len(),
                    c.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Validation AUROC for binary heads, negative validation loss
    /// otherwise (or when the validation labels are single-class).
    pub val_metric: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_metric: f64,
    /// True when AUROC was undefined on the validation set and the loss
    /// fallback drove checkpoint selection.
    pub used_loss_fallback: bool,
}

fn fit_norm(train: &CnnData) -> NormStats {
    let flat_stats = |rows: &[Vec<f64>]| {
        let n: usize = rows.iter().map(Vec::len).sum();
        let mean = rows.iter().flatten().sum::<f64>() / n as f64;
        let ss = rows
            .iter()
            .flatten()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>();
        let std = (ss / n as f64).sqrt();
        (mean, if std > 0.0 { std } else { 1.0 })
    };
    let (am, astd) = flat_stats(&train.arousal);
    let (cm, cstd) = flat_stats(&train.accel);
    NormStats {
        arousal_mean: am,
        arousal_std: astd,
        accel_mean: cm,
        accel_std: cstd,
    }
}

fn batch_tensors<S: Scalar>(data: &CnnData, idx: &[usize]) -> (Tensor<S>, Tensor<S>) {
    let b = idx.len();
    let mut arousal = Tensor::zeros(&[b, 1, AROUSAL_LEN]);
    let mut accel = Tensor::zeros(&[b, 1, ACCEL_LEN]);
    for (row, &i) in idx.iter().enumerate() {
        for (k, &v) in data.arousal[i].iter().enumerate() {
            arousal.data[row * AROUSAL_LEN + k] = S::from_f64(v);
        }
        for (k, &v) in data.accel[i].iter().enumerate() {
            accel.data[row * ACCEL_LEN + k] = S::from_f64(v);
        }
    }
    (arousal, accel)
}

fn eval_pass<S: Scalar>(
    model: &mut TwoTowerCnn<S>,
    loss_kind: &LossKind,
    data: &CnnData,
    batch_size: usize,
) -> Result<(f64, Vec<f64>), NeuralError> {
    let mut total = 0.0;
    let mut scores = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size) {
        let (arousal, accel) = batch_tensors::<S>(data, chunk);
        let logits = model.forward(&arousal, &accel, false)?;
        let targets = data.targets.select(chunk);
        let (loss, _) = loss_and_grad(loss_kind, &logits, &targets)?;
        total += loss * chunk.len() as f64;
        let width = logits.shape[1];
        for r in 0..chunk.len() {
            scores.push(logits.data[r * width].to_f64());
        }
    }
    Ok((total / data.len() as f64, scores))
}

fn val_metric(
    loss_kind: &LossKind,
    val_loss: f64,
    scores: &[f64],
    targets: &Targets,
    fallback_seen: &mut bool,
) -> f64 {
    if let (LossKind::WeightedBce { .. }, Targets::Binary(labels)) = (loss_kind, targets) {
        let classes = labels.iter().collect::<std::collections::BTreeSet<_>>();
        if classes.len() == 2 {
            return eval::auroc(scores, labels).expect("two-class AUROC");
        }
        *fallback_seen = true;
    }
    -val_loss
}

/// Runs the epoch loop: shuffled mini-batches, AdamW updates, plateau
/// scheduling and early stopping on the validation metric. The model is
/// left loaded with the best-scoring epoch's state.
pub fn train<S: Scalar>(
    model: &mut TwoTowerCnn<S>,
    loss_kind: &LossKind,
    train_data: &CnnData,
    val_data: &CnnData,
    config: &TrainConfig,
) -> Result<TrainOutcome, NeuralError> {
    train_data.validate()?;
    val_data.validate()?;
    model.norm = fit_norm(train_data);

    let mut opt = AdamW::new(config.lr, config.betas, config.eps, config.weight_decay);
    let mut sched = PlateauScheduler::new(config.scheduler_factor, config.scheduler_patience);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::new();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_state = model.state();
    let mut since_best = 0;
    let mut fallback = false;

    let mut order: Vec<usize> = (0..train_data.len()).collect();
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            // batch norm cannot fit statistics on a single row
            if chunk.len() < 2 && train_data.len() > 1 {
                continue;
            }
            let (arousal, accel) = batch_tensors::<S>(train_data, chunk);
            let targets = train_data.targets.select(chunk);
            model.zero_grad();
            let logits = model.forward(&arousal, &accel, true)?;
            let (loss, grad) = loss_and_grad(loss_kind, &logits, &targets)?;
            model.backward(&grad);
            opt.step(&mut model.params_mut());
            epoch_loss += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = epoch_loss / seen.max(1) as f64;
        let (val_loss, scores) = eval_pass(model, loss_kind, val_data, config.batch_size)?;
        let metric = val_metric(loss_kind, val_loss, &scores, &val_data.targets, &mut fallback);
        opt.lr = sched.step(metric, opt.lr);
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_metric: metric,
            lr: opt.lr,
        });
        if metric > best_metric {
            best_metric = metric;
            best_epoch = epoch;
            best_state = model.state();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.early_stop_patience {
                break;
            }
        }
    }
    model.set_state(&best_state)?;
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_metric,
        used_loss_fallback: fallback,
    })
}

/// Eval-mode outputs: probability for binary heads, softmax rows for the
/// categorical head, raw values for regression.
pub fn predict<S: Scalar>(
    model: &mut TwoTowerCnn<S>,
    arousal: &[Vec<f64>],
    accel: &[Vec<f64>],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>, NeuralError> {
    if arousal.len() != accel.len() {
        return Err(NeuralError::Shape(format!(
            "{} arousal rows vs {} accel rows",
            arousal.len(),
            accel.len()
        )));
    }
    let data = CnnData {
        arousal: arousal.to_vec(),
        accel: accel.to_vec(),
        targets: Targets::Value(vec![0.0; arousal.len()]),
    };
    let mut out = Vec::with_capacity(arousal.len());
    let idx: Vec<usize> = (0..arousal.len()).collect();
    let head = model.head;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (a, c) = batch_tensors::<S>(&data, chunk);
        let logits = model.forward(&a, &c, false)?;
        let width = logits.shape[1];
        for r in 0..chunk.len() {
            let row: Vec<f64> = (0..width).map(|j| logits.data[r * width + j].to_f64()).collect();
            out.push(match head {
                super::model::HeadKind::Binary => vec![crate::stats::logistic(row[0])],
                super::model::HeadKind::Regression => row,
                super::model::HeadKind::Categorical => {
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|z| (z - m).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    exps.iter().map(|e| e / sum).collect()
                }
            });
        }
    }
    Ok(out)
}
