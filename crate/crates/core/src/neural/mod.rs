//! Tensor engine and the two-tower 1D CNN, with manual backprop.
//!
//! The engine is deliberately small: it implements exactly the ops this
//! architecture needs (strided conv, batch norm, ReLU, inverted dropout,
//! global average pooling, linear) over a generic scalar so training runs
//! in f32 while gradient tests run in f64. Every op's backward pass is
//! validated against central finite differences in the test suite.

mod checkpoint;
pub mod gradcheck;
mod layers;
mod loss;
mod model;
mod optim;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use layers::{BatchNorm1d, Conv1d, Dropout, GlobalAvgPool, Layer, Linear, Relu};
pub use loss::{loss_and_grad, LossKind, Targets};
pub use model::{ConvBlock, HeadKind, NormStats, TwoTowerCnn, ACCEL_LEN, AROUSAL_LEN, EMBED_DIM};
pub use optim::{AdamW, PlateauScheduler};
pub use tensor::{Scalar, Tensor};
pub use train::{predict, train, CnnData, EpochStats, TrainConfig, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("batch norm requires batch >= 2 in training mode")]
    SmallBatch,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty dataset")]
    EmptyData,
    #[error("target/batch mismatch: {targets} targets for {rows} rows")]
    TargetCount { targets: usize, rows: usize },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
