use super::tensor::{Scalar, Tensor};
use super::NeuralError;

/// Training targets, one entry per batch row.
#[derive(Debug, Clone)]
pub enum Targets {
    /// 0/1 labels for the single-logit head.
    Binary(Vec<u8>),
    /// Class indices for the categorical head.
    Class(Vec<u8>),
    /// Regression values in g/dL.
    Value(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Binary(v) => v.len(),
            Targets::Class(v) => v.len(),
            Targets::Value(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Binary(v) => Targets::Binary(idx.iter().map(|&i| v[i]).collect()),
            Targets::Class(v) => Targets::Class(idx.iter().map(|&i| v[i]).collect()),
            Targets::Value(v) => Targets::Value(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub enum LossKind {
    /// Per-class weights [negative, positive].
    WeightedBce { class_weights: [f64; 2] },
    /// One weight per class, applied by target class.
    CrossEntropy { class_weights: Vec<f64> },
    SmoothL1 { delta: f64 },
}

impl LossKind {
    /// Balanced weights N/(k*N_c) from label counts.
    pub fn balanced_bce(labels: &[u8]) -> Self {
        let n = labels.len() as f64;
        let pos = labels.iter().filter(|&&v| v == 1).count() as f64;
        LossKind::WeightedBce {
            class_weights: [n / (2.0 * (n - pos)), n / (2.0 * pos)],
        }
    }

    pub fn balanced_ce(labels: &[u8], n_classes: usize) -> Self {
        let n = labels.len() as f64;
        let weights = (0..n_classes)
            .map(|c| {
                let nc = labels.iter().filter(|&&v| v as usize == c).count() as f64;
                n / (n_classes as f64 * nc)
            })
            .collect();
        LossKind::CrossEntropy { class_weights: weights }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean loss over the batch and its gradient w.r.t. the logits. All the
/// per-element math runs in f64 for stability, independent of S.
pub fn loss_and_grad<S: Scalar>(
    kind: &LossKind,
    logits: &Tensor<S>,
    targets: &Targets,
) -> Result<(f64, Tensor<S>), NeuralError> {
    let [batch, width] = logits.shape[..] else {
        return Err(NeuralError::Shape(format!("loss expects (B,K) logits, got {:?}", logits.shape)));
    };
    if targets.len() != batch {
        return Err(NeuralError::TargetCount { targets: targets.len(), rows: batch });
    }
    if logits.data.iter().any(|v| !v.is_finite()) {
        return Err(NeuralError::NonFinite("logits"));
    }
    let bf = batch as f64;
    let mut grad = Tensor::zeros(&logits.shape);
    let mut total = 0.0;
    match (kind, targets) {
        (LossKind::WeightedBce { class_weights }, Targets::Binary(ys)) => {
            if width != 1 {
                return Err(NeuralError::Shape(format!("binary loss expects 1 logit, got {width}")));
            }
            for (i, &yi) in ys.iter().enumerate() {
                let z = logits.data[i].to_f64();
                let y = f64::from(yi);
                let c = class_weights[yi as usize];
                total += c * (z.max(0.0) - z * y + softplus(-z.abs()));
                let sigma = 1.0 / (1.0 + (-z).exp());
                grad.data[i] = S::from_f64(c * (sigma - y) / bf);
            }
        }
        (LossKind::CrossEntropy { class_weights }, Targets::Class(ys)) => {
            if class_weights.len() != width {
                return Err(NeuralError::Shape(format!(
                    "{} class weights for {width} logits",
                    class_weights.len()
                )));
            }
            for (i, &yi) in ys.iter().enumerate() {
                let t = yi as usize;
                if t >= width {
                    return Err(NeuralError::Shape(format!("class {t} out of range {width}")));
                }
                let row: Vec<f64> = (0..width).map(|j| logits.data[i * width + j].to_f64()).collect();
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
                let c = class_weights[t];
                total += c * (lse - row[t]);
                for j in 0..width {
                    let p = (row[j] - lse).exp();
                    let ind = if j == t { 1.0 } else { 0.0 };
                    grad.data[i * width + j] = S::from_f64(c * (p - ind) / bf);
                }
            }
        }
        (LossKind::SmoothL1 { delta }, Targets::Value(ys)) => {
            if width != 1 {
                return Err(NeuralError::Shape(format!("regression loss expects 1 output, got {width}")));
            }
            let d = *delta;
            for (i, &yi) in ys.iter().enumerate() {
                if !yi.is_finite() {
                    return Err(NeuralError::NonFinite("regression targets"));
                }
                let r = logits.data[i].to_f64() - yi;
                if r.abs() < d {
                    total += 0.5 * r * r;
                    grad.data[i] = S::from_f64(r / bf);
                } else {
                    total += d * (r.abs() - 0.5 * d);
                    grad.data[i] = S::from_f64(d * r.signum() / bf);
                }
            }
        }
        _ => {
            return Err(NeuralError::Shape("loss kind does not match target kind".into()));
        }
    }
    Ok((total / bf, grad))
}
