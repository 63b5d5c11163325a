use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm1d, Conv1d, Dropout, GlobalAvgPool, Layer, Linear, Relu};
use super::tensor::{Scalar, Tensor};
use super::NeuralError;

pub const AROUSAL_LEN: usize = 180;
pub const ACCEL_LEN: usize = 4500;
pub const EMBED_DIM: usize = 64 + 128;

const AROUSAL_CHANNELS: [usize; 3] = [16, 32, 64];
const ACCEL_CHANNELS: [usize; 4] = [32, 64, 128, 128];
const HEAD_HIDDEN: usize = 64;
const DROPOUT_P: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Binary,
    Categorical,
    Regression,
}

impl HeadKind {
    pub fn out_dim(self) -> usize {
        match self {
            HeadKind::Binary | HeadKind::Regression => 1,
            HeadKind::Categorical => 3,
        }
    }
}

/// Input normalization fitted on the training fold, applied to both
/// streams before the towers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub arousal_mean: f64,
    pub arousal_std: f64,
    pub accel_mean: f64,
    pub accel_std: f64,
}

impl Default for NormStats {
    fn default() -> Self {
        NormStats {
            arousal_mean: 0.0,
            arousal_std: 1.0,
            accel_mean: 0.0,
            accel_std: 1.0,
        }
    }
}

pub struct ConvBlock<S> {
    pub conv: Conv1d<S>,
    pub bn: BatchNorm1d<S>,
    pub relu: Relu<S>,
}

impl<S: Scalar> ConvBlock<S> {
    fn new(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        ConvBlock {
            conv: Conv1d::new(in_ch, out_ch, kernel, 2, (kernel - 1) / 2, rng),
            bn: BatchNorm1d::new(out_ch),
            relu: Relu::new(),
        }
    }

    fn forward(&mut self, x: &Tensor<S>, training: bool) -> Result<Tensor<S>, NeuralError> {
        let a = self.conv.forward(x, training)?;
        let b = self.bn.forward(&a, training)?;
        self.relu.forward(&b, training)
    }

    fn backward(&mut self, g: &Tensor<S>) -> Tensor<S> {
        let g = self.relu.backward(g);
        let g = self.bn.backward(&g);
        self.conv.backward(&g)
    }
}

/// Late-fusion CNN: one tower per input stream, pooled embeddings
/// concatenated into a shared fully connected head.
pub struct TwoTowerCnn<S> {
    pub head: HeadKind,
    pub seed: u64,
    pub norm: NormStats,
    pub arousal_blocks: Vec<ConvBlock<S>>,
    pub accel_blocks: Vec<ConvBlock<S>>,
    arousal_pool: GlobalAvgPool,
    accel_pool: GlobalAvgPool,
    pub fc1: Linear<S>,
    head_relu: Relu<S>,
    pub dropout: Dropout<S>,
    pub fc2: Linear<S>,
}

impl<S: Scalar> TwoTowerCnn<S> {
    pub fn new(head: HeadKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arousal_blocks = Vec::new();
        let mut in_ch = 1;
        for &out_ch in &AROUSAL_CHANNELS {
            arousal_blocks.push(ConvBlock::new(in_ch, out_ch, 5, &mut rng));
            in_ch = out_ch;
        }
        let mut accel_blocks = Vec::new();
        in_ch = 1;
        for &out_ch in &ACCEL_CHANNELS {
            accel_blocks.push(ConvBlock::new(in_ch, out_ch, 7, &mut rng));
            in_ch = out_ch;
        }
        let fc1 = Linear::new(EMBED_DIM, HEAD_HIDDEN, &mut rng);
        let fc2 = Linear::new(HEAD_HIDDEN, head.out_dim(), &mut rng);
        let model = TwoTowerCnn {
            head,
            seed,
            norm: NormStats::default(),
            arousal_blocks,
            accel_blocks,
            arousal_pool: GlobalAvgPool::new(),
            accel_pool: GlobalAvgPool::new(),
            fc1,
            head_relu: Relu::new(),
            dropout: Dropout::new(DROPOUT_P, seed.wrapping_add(0x9E37_79B9_7F4A_7C15)),
            fc2,
        };
        debug_assert_eq!(model.arousal_lengths(), vec![180, 90, 45, 23]);
        debug_assert_eq!(model.accel_lengths(), vec![4500, 2250, 1125, 563, 282]);
        model
    }

    /// Temporal lengths entering and leaving each arousal block.
    pub fn arousal_lengths(&self) -> Vec<usize> {
        let mut lens = vec![AROUSAL_LEN];
        for b in &self.arousal_blocks {
            lens.push(b.conv.out_len(*lens.last().unwrap()).unwrap());
        }
        lens
    }

    pub fn accel_lengths(&self) -> Vec<usize> {
        let mut lens = vec![ACCEL_LEN];
        for b in &self.accel_blocks {
            lens.push(b.conv.out_len(*lens.last().unwrap()).unwrap());
        }
        lens
    }

    pub fn arousal_channels(&self) -> Vec<usize> {
        self.arousal_blocks.iter().map(|b| b.conv.out_ch).collect()
    }

    pub fn accel_channels(&self) -> Vec<usize> {
        self.accel_blocks.iter().map(|b| b.conv.out_ch).collect()
    }

    /// Logits of shape (B, out_dim). Inputs are raw grids; the fitted
    /// normalization is applied here.
    pub fn forward(
        &mut self,
        arousal: &Tensor<S>,
        accel: &Tensor<S>,
        training: bool,
    ) -> Result<Tensor<S>, NeuralError> {
        let [b1, _, la] = arousal.shape[..] else {
            return Err(NeuralError::Shape(format!("arousal input {:?}", arousal.shape)));
        };
        let [b2, _, lc] = accel.shape[..] else {
            return Err(NeuralError::Shape(format!("accel input {:?}", accel.shape)));
        };
        if b1 != b2 || la != AROUSAL_LEN || lc != ACCEL_LEN {
            return Err(NeuralError::Shape(format!(
                "expected (B,1,{AROUSAL_LEN}) and (B,1,{ACCEL_LEN}), got {:?} and {:?}",
                arousal.shape, accel.shape
            )));
        }
        let norm = |t: &Tensor<S>, mean: f64, std: f64| {
            let m = S::from_f64(mean);
            let inv = S::from_f64(1.0 / std);
            Tensor::from_vec(&t.shape, t.data.iter().map(|&v| (v - m) * inv).collect())
        };
        let mut a = norm(arousal, self.norm.arousal_mean, self.norm.arousal_std);
        for block in &mut self.arousal_blocks {
            a = block.forward(&a, training)?;
        }
        let a_emb = Layer::<S>::forward(&mut self.arousal_pool, &a, training)?;
        let mut c = norm(accel, self.norm.accel_mean, self.norm.accel_std);
        for block in &mut self.accel_blocks {
            c = block.forward(&c, training)?;
        }
        let c_emb = Layer::<S>::forward(&mut self.accel_pool, &c, training)?;

        let mut fused = Tensor::zeros(&[b1, EMBED_DIM]);
        for s in 0..b1 {
            fused.data[s * EMBED_DIM..s * EMBED_DIM + 64].copy_from_slice(&a_emb.data[s * 64..(s + 1) * 64]);
            fused.data[s * EMBED_DIM + 64..(s + 1) * EMBED_DIM]
                .copy_from_slice(&c_emb.data[s * 128..(s + 1) * 128]);
        }
        let h = self.fc1.forward(&fused, training)?;
        let h = self.head_relu.forward(&h, training)?;
        let h = self.dropout.forward(&h, training)?;
        self.fc2.forward(&h, training)
    }

    /// Accumulates parameter gradients for the most recent forward.
    pub fn backward(&mut self, grad_logits: &Tensor<S>) {
        let g = self.fc2.backward(grad_logits);
        let g = self.dropout.backward(&g);
        let g = self.head_relu.backward(&g);
        let g = self.fc1.backward(&g);
        let batch = g.shape[0];
        let mut ga = Tensor::zeros(&[batch, 64]);
        let mut gc = Tensor::zeros(&[batch, 128]);
        for s in 0..batch {
            ga.data[s * 64..(s + 1) * 64].copy_from_slice(&g.data[s * EMBED_DIM..s * EMBED_DIM + 64]);
            gc.data[s * 128..(s + 1) * 128]
                .copy_from_slice(&g.data[s * EMBED_DIM + 64..(s + 1) * EMBED_DIM]);
        }
        let mut ga = Layer::<S>::backward(&mut self.arousal_pool, &ga);
        for block in self.arousal_blocks.iter_mut().rev() {
            ga = block.backward(&ga);
        }
        let mut gc = Layer::<S>::backward(&mut self.accel_pool, &gc);
        for block in self.accel_blocks.iter_mut().rev() {
            gc = block.backward(&gc);
        }
    }

    /// Trainable parameters in a stable order.
    pub fn params_mut(&mut self) -> Vec<(&mut Vec<S>, &mut Vec<S>)> {
        let mut out = Vec::new();
        for block in self.arousal_blocks.iter_mut().chain(self.accel_blocks.iter_mut()) {
            out.extend(block.conv.params_mut());
            out.extend(block.bn.params_mut());
        }
        out.extend(self.fc1.params_mut());
        out.extend(self.fc2.params_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, g) in self.params_mut() {
            g.fill(S::ZERO);
        }
    }

    /// Named views of all state: parameters plus batch-norm running
    /// stats, in checkpoint order.
    pub fn state(&self) -> Vec<(String, Vec<S>)> {
        let mut out = Vec::new();
        let towers: [(&str, &Vec<ConvBlock<S>>); 2] =
            [("arousal", &self.arousal_blocks), ("accel", &self.accel_blocks)];
        for (name, blocks) in towers {
            for (i, b) in blocks.iter().enumerate() {
                out.push((format!("{name}{i}.conv.w"), b.conv.w.clone()));
                out.push((format!("{name}{i}.conv.b"), b.conv.b.clone()));
                out.push((format!("{name}{i}.bn.gamma"), b.bn.gamma.clone()));
                out.push((format!("{name}{i}.bn.beta"), b.bn.beta.clone()));
                out.push((format!("{name}{i}.bn.running_mean"), b.bn.running_mean.clone()));
                out.push((format!("{name}{i}.bn.running_var"), b.bn.running_var.clone()));
            }
        }
        out.push(("fc1.w".into(), self.fc1.w.clone()));
        out.push(("fc1.b".into(), self.fc1.b.clone()));
        out.push(("fc2.w".into(), self.fc2.w.clone()));
        out.push(("fc2.b".into(), self.fc2.b.clone()));
        out
    }

    pub fn set_state(&mut self, state: &[(String, Vec<S>)]) -> Result<(), NeuralError> {
        let mut expected = self.state();
        if state.len() != expected.len() {
            return Err(NeuralError::BadCheckpoint(format!(
                "{} state sections, expected {}",
                state.len(),
                expected.len()
            )));
        }
        for ((name, values), (exp_name, exp_values)) in state.iter().zip(&mut expected) {
            if name != exp_name || values.len() != exp_values.len() {
                return Err(NeuralError::BadCheckpoint(format!(
                    "section {name}({}) does not match expected {exp_name}({})",
                    values.len(),
                    exp_values.len()
                )));
            }
        }
        let towers: [&mut Vec<ConvBlock<S>>; 2] = [&mut self.arousal_blocks, &mut self.accel_blocks];
        let mut it = state.iter();
        let mut next = || it.next().unwrap().1.clone();
        for blocks in towers {
            for b in blocks.iter_mut() {
                b.conv.w = next();
                b.conv.b = next();
                b.bn.gamma = next();
                b.bn.beta = next();
                b.bn.running_mean = next();
                b.bn.running_var = next();
            }
        }
        self.fc1.w = next();
        self.fc1.b = next();
        self.fc2.w = next();
        self.fc2.b = next();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn declared_architecture_shapes() {
        let m = TwoTowerCnn::<f32>::new(HeadKind::Binary, 1);
        assert_eq!(m.arousal_lengths(), vec![180, 90, 45, 23]);
        assert_eq!(m.accel_lengths(), vec![4500, 2250, 1125, 563, 282]);
        assert_eq!(m.arousal_channels(), vec![16, 32, 64]);
        assert_eq!(m.accel_channels(), vec![32, 64, 128, 128]);
        assert_eq!(m.fc1.in_dim, 192);
        assert_eq!(m.fc2.out_dim, 1);
        assert_eq!(TwoTowerCnn::<f32>::new(HeadKind::Categorical, 1).fc2.out_dim, 3);
    }

    #[test]
    fn forward_produces_logits_and_rejects_bad_shapes() {
        let mut m = TwoTowerCnn::<f32>::new(HeadKind::Categorical, 3);
        let arousal = Tensor::<f32>::zeros(&[2, 1, AROUSAL_LEN]);
        let accel = Tensor::<f32>::zeros(&[2, 1, ACCEL_LEN]);
        let y = m.forward(&arousal, &accel, false).unwrap();
        assert_eq!(y.shape, vec![2, 3]);
        let short = Tensor::<f32>::zeros(&[2, 1, 100]);
        assert!(m.forward(&short, &accel, false).is_err());
        let mismatched = Tensor::<f32>::zeros(&[3, 1, ACCEL_LEN]);
        assert!(m.forward(&arousal, &mismatched, false).is_err());
    }

    #[test]
    fn eval_forward_is_repeatable() {
        let mut m = TwoTowerCnn::<f32>::new(HeadKind::Binary, 9);
        let arousal = Tensor::<f32>::from_vec(
            &[1, 1, AROUSAL_LEN],
            (0..AROUSAL_LEN).map(|i| (i as f32 * 0.37).sin()).collect(),
        );
        let accel = Tensor::<f32>::from_vec(
            &[1, 1, ACCEL_LEN],
            (0..ACCEL_LEN).map(|i| (i as f32 * 0.11).cos()).collect(),
        );
        let y1 = m.forward(&arousal, &accel, false).unwrap();
        let y2 = m.forward(&arousal, &accel, false).unwrap();
        assert_eq!(y1.data, y2.data);
    }

    #[test]
    fn state_roundtrip_restores_outputs() {
        let mut a = TwoTowerCnn::<f32>::new(HeadKind::Binary, 5);
        let mut b = TwoTowerCnn::<f32>::new(HeadKind::Binary, 6);
        let arousal = Tensor::<f32>::from_vec(
            &[1, 1, AROUSAL_LEN],
            (0..AROUSAL_LEN).map(|i| (i as f32 * 0.2).sin()).collect(),
        );
        let accel = Tensor::<f32>::from_vec(
            &[1, 1, ACCEL_LEN],
            (0..ACCEL_LEN).map(|i| (i as f32 * 0.05).sin()).collect(),
        );
        let ya = a.forward(&arousal, &accel, false).unwrap();
        let yb = b.forward(&arousal, &accel, false).unwrap();
        assert_ne!(ya.data, yb.data);
        b.set_state(&a.state()).unwrap();
        let yb2 = b.forward(&arousal, &accel, false).unwrap();
        assert_eq!(ya.data, yb2.data);
    }
}
